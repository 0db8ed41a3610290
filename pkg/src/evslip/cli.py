"""Command-line front end: ``evslip {sample,detect,simulate,label,scenarios}``.

Exit codes
----------
0  success
1  unexpected library error
2  invalid configuration, scenario or command line
3  malformed, out-of-range or out-of-order event log
4  empty noise sample
5  stage violation (e.g. detection without thresholds)
6  no corner events for the slip metric
7  no fuzzy rule fired
8  file system error (missing input, unwritable output)
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, EvSlipError, StageViolation
from .events import DAVIS240, SensorGeometry, read_event_log, write_event_log
from .harris import EHarrisDetector, HarrisParams, format_labeled_csv
from .replay import APPROACHES, detect_log, label_log, sample_thresholds, window_series
from .slip import DetectorConfig, NoiseThresholds

CONFIG_ENV = "EVSLIP_CONFIG"
EXIT_IO = 8

log = logging.getLogger("evslip")


@dataclass
class RunConfig:
    """Settings shared by the replay subcommands, read from a JSON file.

    Every section is optional. For ``simulate`` the sections present in the
    file override the scenario's own values.
    """

    geometry: SensorGeometry = DAVIS240
    slack_us: int = 0
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    harris: HarrisParams = field(default_factory=HarrisParams)
    raw: dict = field(default_factory=dict)


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return RunConfig(
            geometry=SensorGeometry(**d.get("geometry", {})),
            slack_us=int(d.get("ingest", {}).get("slack_us", 0)),
            detector=DetectorConfig(**d.get("detector", {})),
            harris=HarrisParams(**d.get("harris", {})),
            raw=d,
        )
    except ConfigError:
        raise
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {p}: {exc}") from exc


def _approaches(choice: str) -> tuple[str, ...]:
    return APPROACHES if choice == "both" else (choice,)


def _detector_config(cfg: RunConfig, args) -> DetectorConfig:
    det = cfg.detector
    if args.dt_us is not None:
        det = replace(det, dt_us=args.dt_us)
    if args.s_bias is not None:
        det = replace(det, s_bias=args.s_bias)
    return det


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


# --------------------------------------------------------------------------
# subcommands


def cmd_sample(args, cfg: RunConfig) -> int:
    det = _detector_config(cfg, args)
    batch = read_event_log(args.log, cfg.geometry, cfg.slack_us)
    duration = args.duration_us if args.duration_us is not None else det.sampling_us
    t_end = args.start_us + duration
    if len(batch):
        t_end = min(t_end, int(batch.t[-1]) + 1)
    labels, _ = label_log(batch, EHarrisDetector(cfg.harris))
    series = window_series(batch.t, labels, det.dt_us, args.start_us, t_end if len(batch) else args.start_us)
    th = sample_thresholds(series)
    out = _out_dir(args)
    doc = {**th.to_dict(), "dt_us": det.dt_us, "n_windows": len(series), "t_start": args.start_us, "t_end": t_end}
    _write(out / "thresholds.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"th_rmax={th.th_rmax} th_emax={th.th_emax} th_cmax={th.th_cmax} ({len(series)} windows of {det.dt_us} us)")
    return 0


def _read_thresholds(path: Path | None) -> tuple[NoiseThresholds, dict]:
    if path is None or not path.is_file():
        where = "no thresholds file given" if path is None else f"thresholds file {path} not found"
        raise StageViolation(f"{where}; run 'evslip sample' first (monitoring requires noise thresholds)")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return NoiseThresholds.from_dict(doc), doc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid thresholds file {path}: {exc}") from exc


def cmd_detect(args, cfg: RunConfig) -> int:
    det = _detector_config(cfg, args)
    th, doc = _read_thresholds(Path(args.thresholds) if args.thresholds else None)
    if "dt_us" in doc and int(doc["dt_us"]) != det.dt_us:
        raise ConfigError(f"thresholds were sampled with {doc['dt_us']} us windows, detection uses {det.dt_us} us")
    # files written by 'simulate' know where monitoring started and ended
    start = args.start_us if args.start_us is not None else int(doc.get("monitor_start_us", 0))
    end = args.end_us if args.end_us is not None else doc.get("end_us")
    batch = read_event_log(args.log, cfg.geometry, cfg.slack_us)
    rep = detect_log(batch, th, det, EHarrisDetector(cfg.harris), _approaches(args.detector), start, end)
    out = _out_dir(args)
    _write(out / "detection.json", rep.to_json(args.verbose > 0))
    _write(out / "windows.csv", rep.series.to_csv(rep.flags))
    for name, evs in rep.slip_events.items():
        heads = sum(e.kind.value == "incipient" for e in evs)
        print(f"{name}: {len(evs)} flagged windows, {heads} incipient")
    return 0


def _scenario_document(source: str) -> dict:
    from .sim.closed_loop import bundled_scenario_text

    p = Path(source)
    try:
        text = p.read_text(encoding="utf-8") if (p.suffix == ".json" or p.exists()) else bundled_scenario_text(source)
        return json.loads(text)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {source}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario {source} is not valid JSON: {exc}") from exc


def cmd_simulate(args, cfg: RunConfig) -> int:
    from .sim.closed_loop import run_closed_loop, scenario_from_dict

    doc = _scenario_document(args.scenario)
    for section in ("geometry", "detector", "harris", "fuzzy"):
        if section in cfg.raw:
            doc[section] = {**doc.get(section, {}), **cfg.raw[section]}
    sc = scenario_from_dict(doc)
    res = run_closed_loop(sc, seed=args.seed, dt_us=args.dt_us, s_bias=args.s_bias)
    rep = res.report
    keep = _approaches(args.detector)
    rep.slip_events = {k: v for k, v in rep.slip_events.items() if k in keep}
    rep.tallies = {k: v for k, v in rep.tallies.items() if k in keep}

    out = _out_dir(args)
    write_event_log(out / "events.csv", res.events, f"scenario {rep.scenario} seed {rep.seed}\nt_us,x,y,pol")
    _write(out / "ground_truth.csv", res.ground_truth_csv())
    _write(out / "report.json", rep.to_json())
    _write(out / "force_trace.csv", res.force_trace_csv())
    _write(out / "windows.csv", res.window_counts_csv())
    th_doc = {**rep.thresholds.to_dict(), "dt_us": rep.dt_us, **rep.timeline}
    _write(out / "thresholds.json", json.dumps(th_doc, sort_keys=True, indent=2) + "\n")

    q = "n/a" if rep.q_sm_mm is None else f"{rep.q_sm_mm:.3f} mm"
    print(f"scenario {rep.scenario} seed {rep.seed}: {rep.n_events} events, {rep.n_windows} windows")
    for name, t in rep.tallies.items():
        print(f"  {name}: {t.episodes} episodes, {t.false_episodes} false, {t.detected} detected, {t.missed} missed")
    print(f"  commands {sum(c['commanded'] is not None for c in rep.commands)}, final grip {rep.final_grip:.2f}%, "
          f"slipping={rep.final_slipping}, suppressed={rep.suppressed}, Q_sm {q}")
    return 0


def cmd_label(args, cfg: RunConfig) -> int:
    batch = read_event_log(args.log, cfg.geometry, cfg.slack_us)
    labels, scores = label_log(batch, EHarrisDetector(cfg.harris))
    out = _out_dir(args)
    _write(out / "labeled.csv", format_labeled_csv(batch, labels, scores))
    counts = {n: int((labels == i).sum()) for i, n in enumerate(("flat", "edge", "corner"))}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def cmd_scenarios(args, cfg: RunConfig) -> int:
    from .sim.closed_loop import SCENARIO_ALIASES, bundled_scenario_text, bundled_scenarios

    if args.show:
        sys.stdout.write(bundled_scenario_text(args.show))
        return 0
    for name in bundled_scenarios():
        print(name)
    for alias, target in SCENARIO_ALIASES.items():
        print(f"{alias} -> {target}")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=os.environ.get(CONFIG_ENV),
                        help=f"JSON run config (default: ${CONFIG_ENV})")
    common.add_argument("--out", default=".", help="output directory, created if absent")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--dt-us", type=int, default=None, help="detection window width in microseconds")
    common.add_argument("--s-bias", type=float, default=None, help="threshold sensitivity bias")
    common.add_argument("--detector", choices=("baseline", "feature", "both"), default="both")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="evslip", description="Event-based slip detection and suppression.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="derive noise thresholds from a motion-free log")
    s.add_argument("log")
    s.add_argument("--start-us", type=int, default=0)
    s.add_argument("--duration-us", type=int, default=None, help="sampling length (default from config, 2 s)")
    s.set_defaults(func=cmd_sample)

    d = sub.add_parser("detect", parents=[common], help="run both slip detectors over a log")
    d.add_argument("log")
    d.add_argument("--thresholds", default=None, help="thresholds.json written by 'sample'")
    d.add_argument("--start-us", type=int, default=None,
                   help="first monitored instant (default: from the thresholds file, else 0)")
    d.add_argument("--end-us", type=int, default=None)
    d.set_defaults(func=cmd_detect)

    m = sub.add_parser("simulate", parents=[common], help="closed-loop grasp simulation")
    m.add_argument("scenario", help="bundled scenario name or JSON path")
    m.set_defaults(func=cmd_simulate)

    lab = sub.add_parser("label", parents=[common], help="dump per-event e-Harris labels")
    lab.add_argument("log")
    lab.set_defaults(func=cmd_label)

    sc = sub.add_parser("scenarios", parents=[common], help="list bundled scenarios")
    sc.add_argument("--show", default=None, metavar="NAME", help="print one scenario document")
    sc.set_defaults(func=cmd_scenarios)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = load_run_config(args.config)
        return args.func(args, cfg)
    except EvSlipError as exc:
        print(f"evslip: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"evslip: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
