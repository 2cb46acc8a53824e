"""Per-state delay/energy vectors and per-ACK resource metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .airtime import RECEIVE_DELAY_1, RECEIVE_DELAY_2, AttemptTiming, RadioConfig, attempt_timings
from .chain import (
    ChainModel,
    StateKind,
    absorbing_stats,
    build_transition_matrix,
    channel_access_probs,
    compose_slot_mixture,
    state_index,
    steady_state,
    transition_matrix,
)
from .errors import NoSuccessError, ParameterError
from .params import EnergyProfile, MacParams


@dataclass(frozen=True)
class ResourceMetrics:
    expected_delay_per_ack: float
    expected_energy_per_ack: float
    success_probability: float
    expected_attempts: float
    per_attempt_slot_probabilities: tuple[float, ...]
    drop_probability: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_attempt_slot_probabilities"] = list(self.per_attempt_slot_probabilities)
        return d


def _y_power(params: MacParams, attempt: int, exponent: int) -> float:
    x, _ = channel_access_probs(params, attempt)
    if x >= 1.0:
        return 0.0
    return math.exp(exponent * math.log1p(-x))


def _chk1_weight(params: MacParams, attempt: int) -> float:
    # probability-weighted share of the RS1 ACK branch (gamma * y^(2A) * alpha)
    gamma = params.slot_choice[attempt - 1]
    return gamma * _y_power(params, attempt, 2 * params.device_count) * params.channel_quality


def _wait_entry(params: MacParams, P: np.ndarray, attempt: int, t: AttemptTiming) -> float:
    """Expected time since the end of the uplink when the wait state is entered."""
    N = params.max_transmissions
    K = StateKind

    def p(a, b):
        return P[state_index(attempt, a, N), state_index(attempt, b, N)]

    v_pre1 = p(K.RECV1, K.PRE1)
    v_chk1 = v_pre1 * p(K.PRE1, K.CHK1)
    v_recv2 = p(K.RECV1, K.RECV2) + v_pre1 * p(K.PRE1, K.RECV2) + v_chk1 * p(K.CHK1, K.RECV2)
    v_chk2 = v_recv2 * p(K.RECV2, K.PRE2) * p(K.PRE2, K.CHK2)

    flows = np.array([v_chk1 * p(K.CHK1, K.WAIT), v_recv2 * p(K.RECV2, K.WAIT), v_chk2 * p(K.CHK2, K.WAIT)])
    elapsed = np.array([RECEIVE_DELAY_1 + t.rs1_ack, RECEIVE_DELAY_2 + t.rs2_preamble, RECEIVE_DELAY_2 + t.rs2_ack])
    total = flows.sum()
    if total <= 0:
        # wait state unreachable; use the RS2-miss path so D stays finite
        return elapsed[1]
    return float(flows @ elapsed / total)


def wait_duration(params: MacParams, radio: RadioConfig, attempt: int, matrix: np.ndarray | None = None) -> float:
    """Remaining duty-cycle off-time after the receive slots, floored at the ACK timeout."""
    if not 1 <= attempt <= params.max_transmissions:
        raise ParameterError(f"attempt must be in [1, {params.max_transmissions}], got {attempt}")
    if not params.duty_cycle > 0:
        raise ParameterError("duty_cycle must be positive")
    P = transition_matrix(params, radio) if matrix is None else matrix
    t = attempt_timings(radio, params.max_transmissions, params.dr_stepping)[attempt - 1]
    off_time = t.tx * (1.0 - params.duty_cycle) / params.duty_cycle
    return max(off_time - _wait_entry(params, P, attempt, t), params.ack_timeout_mean)


def delay_vector(params: MacParams, radio: RadioConfig, matrix: np.ndarray | None = None) -> np.ndarray:
    N = params.max_transmissions
    P = transition_matrix(params, radio) if matrix is None else matrix
    K = StateKind
    D = np.zeros(8 * N + 1)
    for n, t in enumerate(attempt_timings(radio, N, params.dr_stepping), start=1):
        D[state_index(n, K.SEND, N)] = RECEIVE_DELAY_1 + t.tx
        D[state_index(n, K.RECV1, N)] = t.rs1_preamble
        D[state_index(n, K.CHK1, N)] = _chk1_weight(params, n) * (
            (t.rs1_ack - t.rs1_preamble) + max(1.0 - t.rs1_ack, 0.0)
        )
        D[state_index(n, K.RECV2, N)] = t.rs2_preamble
        D[state_index(n, K.CHK2, N)] = t.rs2_ack - t.rs2_preamble
        D[state_index(n, K.WAIT, N)] = wait_duration(params, radio, n, P)
    return D


def energy_vector(params: MacParams, radio: RadioConfig, profile: EnergyProfile,
                  matrix: np.ndarray | None = None) -> np.ndarray:
    N = params.max_transmissions
    P = transition_matrix(params, radio) if matrix is None else matrix
    K = StateKind
    V = profile.voltage
    E = np.zeros(8 * N + 1)
    for n, t in enumerate(attempt_timings(radio, N, params.dr_stepping), start=1):
        E[state_index(n, K.SEND, N)] = V * (profile.current_tx * t.tx + profile.current_idle * RECEIVE_DELAY_1)
        E[state_index(n, K.RECV1, N)] = V * profile.current_rx * t.rs1_preamble
        E[state_index(n, K.CHK1, N)] = _chk1_weight(params, n) * V * (
            profile.current_rx * (t.rs1_ack - t.rs1_preamble) + profile.current_idle * max(1.0 - t.rs1_ack, 0.0)
        )
        E[state_index(n, K.RECV2, N)] = V * profile.current_rx * t.rs2_preamble
        E[state_index(n, K.CHK2, N)] = V * profile.current_rx * (t.rs2_ack - t.rs2_preamble)
        E[state_index(n, K.WAIT, N)] = V * profile.current_idle * wait_duration(params, radio, n, P)
    return E


def expected_resources(model: ChainModel, pi: np.ndarray | None = None) -> ResourceMetrics:
    """Renewal-reward delay and energy per ACK'd frame.

    The reward earned between two visits of the ACK state is sum(pi * D) /
    pi[ACK]; frames dropped in between are charged to the next success.
    """
    if pi is None:
        pi = steady_state(model)
    pi_ack = float(pi[model.ack_index])
    if not pi_ack > 0:
        raise NoSuccessError("the ACK state is never reached; delay per ACK is unbounded")
    frame = absorbing_stats(model)
    slots = model.params.slot_choice if model.params is not None else ()
    return ResourceMetrics(
        expected_delay_per_ack=float(pi @ model.delay) / pi_ack,
        expected_energy_per_ack=float(pi @ model.energy) / pi_ack,
        success_probability=frame.success_probability,
        expected_attempts=frame.expected_attempts,
        per_attempt_slot_probabilities=tuple(slots),
        drop_probability=frame.drop_probability,
    )


def evaluate_model(params: MacParams, radio: RadioConfig | None = None,
                   profile: EnergyProfile | None = None) -> ResourceMetrics:
    return expected_resources(build_transition_matrix(params, radio, profile))


def mixed_slot_estimate(params: MacParams, radio: RadioConfig | None, profile: EnergyProfile | None,
                        slot_probs, method: str = "mixture") -> ResourceMetrics:
    """Resources when the gateway answers attempt n in RS1 with probability slot_probs[n-1].

    ``method="mixture"`` weights the pure-RS1 and pure-RS2 chains attempt by
    attempt (see :func:`compose_slot_mixture`). ``method="substitute"``
    plugs the probabilities straight into the gamma-linear transition
    formulas; that variant counts gamma twice along the RS1 success path, so
    it falls below both pure-slot curves for interior values.
    """
    probs = tuple(float(p) for p in slot_probs)
    if len(probs) != params.max_transmissions or any(not 0 <= p <= 1 for p in probs):
        raise ParameterError(f"slot_probs must be {params.max_transmissions} values in [0, 1]")
    if method == "substitute":
        return evaluate_model(params.replace(slot_choice=probs), radio, profile)
    if method != "mixture":
        raise ParameterError(f"unknown method {method!r}")
    rs1 = build_transition_matrix(params.replace(slot_choice=1.0), radio, profile)
    rs2 = build_transition_matrix(params.replace(slot_choice=0.0), radio, profile)
    return expected_resources(compose_slot_mixture(rs1, rs2, probs))
