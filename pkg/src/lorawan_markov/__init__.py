"""Markov-chain delay/energy model of confirmed LoRaWAN Class A uplinks, with a validating simulator."""
