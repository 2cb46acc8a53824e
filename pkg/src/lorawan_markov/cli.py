"""Command-line front end: evaluate, sweep, validate, sim, export-matrix.

Exit codes: 0 ok, 2 config error, 3 numerical/solver error, 4 no-success
scenario when ``--require-numeric`` demanded a number.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import math
import sys
import warnings

from .chain import build_transition_matrix, compose_slot_mixture
from .errors import ConfigError, ConsistencyError, ModelError, NoSuccessError, ParameterError, SolverError
from .metrics import ResourceMetrics, evaluate_model, mixed_slot_estimate
from .netsim import GatewayPolicy, estimate_slot_probabilities, run_simulation
from .params import AckPolicy
from .scenario import Scenario, default_scenario, load_scenario

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NO_SUCCESS = 0, 2, 3, 4

SWEEP_PARAMS = {
    "A": ("device_count", int),
    "N": ("max_transmissions", int),
    "delta": ("duty_cycle", float),
    "alpha": ("channel_quality", float),
    "m_c": ("channel_count", int),
}
SWEEP_COLUMNS = ("parameter", "value", "gamma", "case", "delay_per_ack_s", "energy_per_ack_j",
                 "success_probability", "expected_attempts")
VALIDATE_COLUMNS = ("device_count", "policy", "sim_delay_s", "sim_delay_ci_s", "sim_energy_j", "sim_energy_ci_j",
                    "sim_drop_rate", "model_rs1_delay_s", "model_rs1_energy_j", "model_rs2_delay_s",
                    "model_rs2_energy_j", "mixed_delay_s", "mixed_energy_j", "mixed_delay_rel_err",
                    "mixed_energy_rel_err", "slot_probabilities")


def fmt(x) -> str:
    """At least 9 significant digits; non-finite values spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario) if args.scenario else default_scenario()
    sim_changes = {}
    if getattr(args, "seed", None) is not None:
        sim_changes["base_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        sim_changes["runs"] = args.runs
    if getattr(args, "duration", None) is not None:
        sim_changes["sim_duration"] = args.duration
    if getattr(args, "policy", None) is not None:
        sim_changes["gateway_policy"] = GatewayPolicy.parse(args.policy)
    return sc.with_sim(**sim_changes) if sim_changes else sc


def _cases(args, scenario: Scenario) -> list[AckPolicy]:
    choice = getattr(args, "case", None)
    if choice is None:
        return [scenario.mac.ack_policy]
    if choice == "both":
        return [AckPolicy.CASE1, AckPolicy.CASE2]
    return [AckPolicy.parse(choice)]


def _gamma(args, n: int):
    """Returns ("fixed", slot tuple or None) or ("mixed", probabilities)."""
    choice = getattr(args, "gamma", None)
    if choice is None:
        return "fixed", None
    if choice == "rs1":
        return "fixed", 1.0
    if choice == "rs2":
        return "fixed", 0.0
    if choice.startswith("mixed:"):
        path = choice[len("mixed:"):]
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read slot probabilities from {path}: {exc}") from None
        if isinstance(data, dict):
            data = data.get("slot_probabilities", data.get("rs1_selection_frequency"))
        if not isinstance(data, list) or len(data) != n:
            raise ConfigError(f"{path}: expected a JSON list of {n} slot probabilities")
        try:
            probs = [float(v) for v in data]
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: slot probabilities must be numbers") from None
        return "mixed", probs
    raise ConfigError(f"--gamma must be rs1, rs2 or mixed:<path>, got {choice!r}")


def _metrics(scenario: Scenario, mac, gamma_mode, gamma_value) -> ResourceMetrics:
    if gamma_mode == "mixed":
        return mixed_slot_estimate(mac, scenario.radio, scenario.profile, gamma_value)
    if gamma_value is not None:
        mac = mac.replace(slot_choice=gamma_value)
    return evaluate_model(mac, scenario.radio, scenario.profile)


def cmd_evaluate(args) -> int:
    sc = _scenario(args)
    mode, value = _gamma(args, sc.mac.max_transmissions)
    reports = []
    unbounded = False
    for case in _cases(args, sc):
        mac = sc.mac.replace(ack_policy=case)
        row = {"case": case.value}
        try:
            m = _metrics(sc, mac, mode, value)
        except NoSuccessError:
            unbounded = True
            row.update(expected_delay_per_ack="unbounded", expected_energy_per_ack="unbounded",
                       success_probability=0.0, expected_attempts=float(mac.max_transmissions),
                       drop_probability=1.0)
        else:
            row.update(m.to_dict())
        if mode == "mixed":
            row["per_attempt_slot_probabilities"] = list(value)
        elif value is not None:
            row["per_attempt_slot_probabilities"] = [float(value)] * mac.max_transmissions
        else:
            row.setdefault("per_attempt_slot_probabilities", list(mac.slot_choice))
        reports.append(row)
    doc = {"scenario": sc.name, "reports": reports}
    with _output(args.out) as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
    if unbounded and args.require_numeric:
        print("error: no-success scenario: delay per ACK is unbounded", file=sys.stderr)
        return EXIT_NO_SUCCESS
    return EXIT_OK


def _parse_values(text: str, name: str, kind) -> list:
    values = []
    for item in [t for t in text.replace(";", ",").split(",") if t.strip()]:
        try:
            values.append(kind(item.strip()))
        except ValueError:
            raise ConfigError(f"sweep value {item.strip()!r} is not a valid {name}") from None
    return values


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    field_name, kind = SWEEP_PARAMS[args.param]
    values = _parse_values(args.values, args.param, kind)
    cases = [AckPolicy.CASE1, AckPolicy.CASE2] if args.case in (None, "both") else [AckPolicy.parse(args.case)]
    rows = []
    # validate every entry before any output is produced
    macs = []
    for v in values:
        try:
            macs.append(sc.mac.replace(**{field_name: v}))
        except ParameterError as exc:
            raise ConfigError(f"invalid sweep value {args.param}={v}: {exc}") from None
    for v, mac in zip(values, macs):
        for gamma in (1.0, 0.0):
            for case in cases:
                p = mac.replace(slot_choice=gamma, ack_policy=case)
                try:
                    m = evaluate_model(p, sc.radio, sc.profile)
                    cols = [m.expected_delay_per_ack, m.expected_energy_per_ack, m.success_probability,
                            m.expected_attempts]
                except NoSuccessError:
                    cols = [math.inf, math.inf, 0.0, float(p.max_transmissions)]
                rows.append([args.param, v, int(gamma), case.value] + [fmt(c) for c in cols])
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = _scenario(args)
    counts = _parse_values(args.device_counts, "device count", int)
    rows = []
    for a in counts:
        try:
            mac = sc.mac.replace(device_count=a)
        except ParameterError as exc:
            raise ConfigError(f"invalid device count {a}: {exc}") from None
        cfg = dataclasses.replace(sc.sim, mac=mac)
        stats = run_simulation(cfg, workers=args.workers)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            probs = estimate_slot_probabilities(stats)
        rs1 = evaluate_model(mac.replace(slot_choice=1.0), sc.radio, sc.profile)
        rs2 = evaluate_model(mac.replace(slot_choice=0.0), sc.radio, sc.profile)
        mixed = mixed_slot_estimate(mac, sc.radio, sc.profile, probs)

        def rel(model, sim):
            return (model - sim) / sim if sim and math.isfinite(sim) else math.nan

        rows.append([
            a, cfg.gateway_policy.value,
            fmt(stats.mean_delay_per_ack), fmt(stats.delay_ci), fmt(stats.mean_energy_per_ack), fmt(stats.energy_ci),
            fmt(stats.drop_rate),
            fmt(rs1.expected_delay_per_ack), fmt(rs1.expected_energy_per_ack),
            fmt(rs2.expected_delay_per_ack), fmt(rs2.expected_energy_per_ack),
            fmt(mixed.expected_delay_per_ack), fmt(mixed.expected_energy_per_ack),
            fmt(rel(mixed.expected_delay_per_ack, stats.mean_delay_per_ack)),
            fmt(rel(mixed.expected_energy_per_ack, stats.mean_energy_per_ack)),
            " ".join(fmt(p) for p in probs),
        ])
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VALIDATE_COLUMNS)
        w.writerows(rows)
    return EXIT_OK


def cmd_sim(args) -> int:
    sc = _scenario(args)
    stats = run_simulation(sc.sim, workers=args.workers)
    with _output(args.out) as fh:
        stats.write_csv(fh)
    summary = stats.to_json() + "\n"
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(summary)
    elif args.out not in (None, "-"):
        sys.stdout.write(summary)
    return EXIT_OK


def cmd_export_matrix(args) -> int:
    sc = _scenario(args)
    mode, value = _gamma(args, sc.mac.max_transmissions)
    mac = sc.mac.replace(ack_policy=_cases(args, sc)[0])
    if mode == "mixed":
        rs1 = build_transition_matrix(mac.replace(slot_choice=1.0), sc.radio, sc.profile)
        rs2 = build_transition_matrix(mac.replace(slot_choice=0.0), sc.radio, sc.profile)
        model = compose_slot_mixture(rs1, rs2, value)
    else:
        if value is not None:
            mac = mac.replace(slot_choice=value)
        model = build_transition_matrix(mac, sc.radio, sc.profile)
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        if args.vectors:
            w.writerow(("state", "delay_s", "energy_j"))
            for label, d, e in zip(model.labels, model.delay, model.energy):
                w.writerow((label, repr(float(d)), repr(float(e))))
        else:
            w.writerow(("state",) + tuple(model.labels))
            for label, row in zip(model.labels, model.matrix):
                w.writerow((label,) + tuple(repr(float(p)) for p in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lorawan-markov",
                                     description="Delay and energy per ACK'd uplink for LoRaWAN Class A devices.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="INI scenario file (default: built-in default scenario)")
    common.add_argument("--out", help="output file (default: stdout)")
    sim_opts = argparse.ArgumentParser(add_help=False)
    sim_opts.add_argument("--seed", type=int, help="base seed; run r uses seed + r")
    sim_opts.add_argument("--runs", type=int)
    sim_opts.add_argument("--duration", type=float, help="simulated seconds per run")
    sim_opts.add_argument("--policy", choices=[p.value for p in GatewayPolicy])
    sim_opts.add_argument("--workers", type=int, default=1, help="parallel simulation processes")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="model metrics as JSON")
    p.add_argument("--case", choices=["1", "2", "both"])
    p.add_argument("--gamma", help="rs1, rs2 or mixed:<json file with N probabilities>")
    p.add_argument("--require-numeric", action="store_true", help="exit 4 when delay per ACK is unbounded")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="model metrics over a parameter grid as CSV")
    p.add_argument("--param", required=True, choices=list(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values (may be empty)")
    p.add_argument("--case", choices=["1", "2", "both"])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", parents=[common, sim_opts], help="model versus simulator comparison CSV")
    p.add_argument("--device-counts", default="10,40,80")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sim", parents=[common, sim_opts], help="run the simulator; per-frame CSV")
    p.add_argument("--summary", help="write the JSON summary here (default: stdout when --out is a file)")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("export-matrix", parents=[common], help="transition matrix (or state vectors) as CSV")
    p.add_argument("--case", choices=["1", "2"])
    p.add_argument("--gamma", help="rs1, rs2 or mixed:<json file with N probabilities>")
    p.add_argument("--vectors", action="store_true", help="export per-state delay and energy instead")
    p.set_defaults(func=cmd_export_matrix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ConsistencyError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NoSuccessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_SUCCESS
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
