"""Command-line front end: simulate, sweep-beta, label, calibrate, evaluate.

Every run writes its fully resolved configuration next to its outputs. On
failure a human-readable message goes to stderr and ``error.json`` is
written to the output directory. Exit codes: 0 success, 1 invalid input,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from .calibrate import CalibrationOptions, calibrate, mae, objective
from .core import ModelParams, RampGeometry
from .data import SchemaError, build_observations, label_event, load_events, read_labels, write_labels
from .sim import ScenarioConfig, dump_config, load_config, run_scenario, sweep_beta, sweep_table_csv

log = logging.getLogger("merge_game")


class ValidationError(Exception):
    """Bad flags, config or input data."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _parse_value(text: str):
    return yaml.safe_load(text)


def apply_overrides(d: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key.sub.0=value`` overrides to a nested dict (values parsed as YAML)."""
    d = json.loads(json.dumps(d))  # deep copy of plain data
    for item in overrides or ():
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        node = d
        for k in keys[:-1]:
            if isinstance(node, list):
                node = node[int(k)]
            else:
                if k not in node:
                    raise ValidationError(f"override {path!r}: unknown key {k!r}")
                node = node[k]
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(raw)
        else:
            if last not in node:
                raise ValidationError(f"override {path!r}: unknown key {last!r}")
            node[last] = _parse_value(raw)
    return d


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_yaml(path: Path, data) -> None:
    path.write_text(yaml.safe_dump(data, sort_keys=True, default_flow_style=None))


def _ramp_from_args(args) -> Optional[RampGeometry]:
    values = (args.ramp_end_x, args.merge_zone_start_x, args.lane_offset)
    if all(v is None for v in values):
        return None
    defaults = RampGeometry()
    return RampGeometry(
        ramp_end_x=defaults.ramp_end_x if args.ramp_end_x is None else args.ramp_end_x,
        merge_zone_start_x=defaults.merge_zone_start_x if args.merge_zone_start_x is None else args.merge_zone_start_x,
        lane_offset=defaults.lane_offset if args.lane_offset is None else args.lane_offset,
    )


def _scenario(args) -> ScenarioConfig:
    base = load_config(args.config).to_dict()
    base["seed"] = args.seed
    return ScenarioConfig.from_dict(apply_overrides(base, args.set))


def cmd_simulate(args) -> None:
    config = _scenario(args)
    out = _out_dir(args.out)
    (out / "config.yaml").write_text(dump_config(config))
    result = run_scenario(config)
    result.to_csv(out / "trajectory.csv")
    if result.collisions:
        _write_yaml(out / "collisions.yaml", result.collisions)
        log.warning("%d collision(s) recorded", len(result.collisions))


def cmd_sweep_beta(args) -> None:
    config = _scenario(args)
    out = _out_dir(args.out)
    (out / "config.yaml").write_text(dump_config(config))
    _write_yaml(out / "sweep.yaml", {"betas": args.betas, "iterations": args.iterations, "lag_id": args.lag_id})
    rows = sweep_beta(config, args.betas, args.iterations, args.lag_id)
    sweep_table_csv(rows, out / "sweep.csv")


def _events(args):
    events = load_events(args.input, ramp=_ramp_from_args(args), min_duration=args.min_duration)
    if not events:
        raise ValidationError(f"{args.input}: no events of at least {args.min_duration} s")
    return events


def _labels(args, events) -> dict:
    if getattr(args, "labels", None):
        labels = read_labels(args.labels)
        missing = [ev.event_id for ev in events if ev.event_id not in labels]
        if missing:
            raise ValidationError(f"label file lacks events {missing[:5]}")
        return labels
    return {ev.event_id: label_event(ev, args.window, args.order) for ev in events}


def _observations(args, events, labels) -> list:
    obs = []
    for ev in events:
        obs.extend(build_observations(ev, labels[ev.event_id], args.rate))
    if not obs:
        raise ValidationError("events yield no observations at the chosen rate")
    return obs


def cmd_label(args) -> None:
    out = _out_dir(args.out)
    _write_yaml(out / "config.yaml", {"input": str(args.input), "window": args.window, "order": args.order,
                                      "min_duration": args.min_duration})
    events = _events(args)
    labels = {ev.event_id: label_event(ev, args.window, args.order) for ev in events}
    write_labels(labels, out / "labels.csv")


def _calibration_options(args) -> CalibrationOptions:
    base = CalibrationOptions(n_starts=args.n_starts, max_iters=args.max_iters, source=args.source,
                              beta=args.beta, mode=args.mode, seed=args.seed).to_dict()
    return CalibrationOptions.from_dict(apply_overrides(base, args.set))


def cmd_calibrate(args) -> None:
    opts = _calibration_options(args)
    out = _out_dir(args.out)
    _write_yaml(out / "config.yaml", {"input": str(args.input), "labels": args.labels, "rate": args.rate,
                                      "window": args.window, "order": args.order, "options": opts.to_dict()})
    events = _events(args)
    obs = _observations(args, events, _labels(args, events))
    result = calibrate(obs, opts)
    (out / "result.json").write_text(result.to_json() + "\n")


def _load_params(path) -> ModelParams:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected a mapping of model parameters")
    if "params" in raw and isinstance(raw["params"], dict):
        raw = raw["params"]  # accept a calibration result file
    return ModelParams.from_dict(raw)


def cmd_evaluate(args) -> None:
    params = _load_params(args.params)
    if args.beta is not None:
        params = ModelParams.from_dict({**params.to_dict(), "beta": args.beta})
    out = _out_dir(args.out)
    _write_yaml(out / "config.yaml", {"input": str(args.input), "labels": args.labels, "rate": args.rate,
                                      "source": args.source, "params": params.to_dict()})
    events = _events(args)
    obs = _observations(args, events, _labels(args, events))
    report = {
        "n_obs": len(obs),
        "objective": objective(params, obs, args.source),
        "mae": mae(params, obs, args.source),
        "source": args.source,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="merge-game", description="Merge-game simulation, labeling and calibration.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_flags(p):
        p.add_argument("--config", required=True, help="scenario config file (YAML)")
        p.add_argument("--seed", required=True, type=int, help="random seed (64-bit unsigned integer)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. duration=5 (s) or vehicles.0.params.beta=0.5")
        p.add_argument("--out", required=True, help="output directory")

    def data_flags(p):
        p.add_argument("--input", required=True, help="trajectory file (CSV, one row per event/time/actor)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--min-duration", type=float, default=3.0, help="drop events shorter than this (s)")
        p.add_argument("--window", type=float, default=2.0, help="smoothing window (s)")
        p.add_argument("--order", type=int, default=2, help="smoothing polynomial order (dimensionless)")
        p.add_argument("--ramp-end-x", type=float, help="ramp end position for files without ramp columns (m)")
        p.add_argument("--merge-zone-start-x", type=float, help="merge zone start for files without ramp columns (m)")
        p.add_argument("--lane-offset", type=float, help="ramp-to-main lateral offset for files without ramp columns (m)")

    def obs_flags(p):
        p.add_argument("--labels", help="label file (CSV); labels are computed when omitted")
        p.add_argument("--rate", type=float, default=1.0, help="observation rate (Hz)")

    p = sub.add_parser("simulate", help="run one scenario and write its trajectory log")
    scenario_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-beta", help="tabulate chosen behaviors over a beta sweep")
    scenario_flags(p)
    p.add_argument("--betas", type=_float_list, default=[0.01, 0.1, 1.0, 10.0],
                   help="comma-separated beta values (payoff units)")
    p.add_argument("--iterations", type=int, default=50, help="replicas per beta (count)")
    p.add_argument("--lag-id", help="vehicle whose behavior is tabulated (default: first game player)")
    p.set_defaults(func=cmd_sweep_beta)

    p = sub.add_parser("label", help="segment trajectories into labeled behavior epochs")
    data_flags(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("calibrate", help="fit (phi1..phi8, tau) to labeled trajectories")
    data_flags(p)
    obs_flags(p)
    p.add_argument("--seed", required=True, type=int, help="seed of the start design (integer)")
    p.add_argument("--n-starts", type=int, default=8, help="number of local searches (count)")
    p.add_argument("--max-iters", type=int, default=400, help="objective evaluations per local search (count)")
    p.add_argument("--source", choices=("nash", "qre"), default="nash", help="lower-level probabilities")
    p.add_argument("--beta", type=float, default=0.1, help="temperature of the qre source (payoff units)")
    p.add_argument("--mode", choices=("global", "per_lag"), default="global", help="one fit, or one fit per lag")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a calibration option, e.g. min_step=0.0005 (unit cube) or bounds.8=[0.5,5] (s)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="report the mean absolute error of given parameters")
    data_flags(p)
    obs_flags(p)
    p.add_argument("--params", required=True, help="model parameter file (YAML/JSON) or calibration result")
    p.add_argument("--source", choices=("nash", "qre"), default="nash", help="lower-level probabilities")
    p.add_argument("--beta", type=float, help="override the parameters' beta (payoff units)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _record_error(out: Optional[str], kind: str, exc: BaseException) -> None:
    print(f"error: {exc}", file=sys.stderr)
    if out is None:
        return
    try:
        path = _out_dir(out) / "error.json"
        path.write_text(json.dumps({"kind": kind, "type": type(exc).__name__, "message": str(exc)},
                                   indent=2, sort_keys=True) + "\n")
    except OSError:
        pass


def _out_from_argv(argv) -> Optional[str]:
    for k, item in enumerate(argv):
        if item == "--out" and k + 1 < len(argv):
            return argv[k + 1]
        if item.startswith("--out="):
            return item.split("=", 1)[1]
    return None


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        _record_error(_out_from_argv(argv), "validation", exc)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValidationError, SchemaError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        _record_error(args.out, "validation", exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        _record_error(args.out, "runtime", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
