"""Command-line entry point.

Subcommands write one CSV (header row first) plus a ``<out>.meta.json``
sidecar with the thresholds, the dB convention and any warnings.

Exit codes: 0 success, 1 selftest failure, 2 configuration error,
3 detector errors above ``max_error_fraction``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from locsec import harness
from locsec.config import RunConfig, load_config, parse_detectors, validate
from locsec.errors import ConfigError
from locsec.scenario import DB_CONVENTION, VALIDATION

logger = logging.getLogger("locsec")

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_FAULT = 3

SCHEMAS = {
    "calibrate": ("detector", "K", "N", "pfa_target", "threshold", "trials", "seed"),
    "pd-curve": ("detector", "K", "K0", "N", "axis", "axis_db", "pd", "trials", "errors", "seed"),
    "pfa-sweep": ("detector", "K", "N", "mismatch", "mismatch_db", "pfa", "trials", "seed"),
    "em-convergence": ("detector", "h", "rms_delta", "trials_included"),
}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_csv(path: Path | None, header, rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    finally:
        if path:
            fh.close()


def _write_meta(path: Path | None, meta: dict) -> None:
    if path is None:
        return
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


class _Run:
    """Collects warnings and error counts across one subcommand."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.warnings: list[str] = []
        self.fault = False
        self.thresholds: dict[str, float] = {}

    def note_errors(self, label: str, errors: int, trials: int) -> None:
        if trials and errors / trials > self.cfg.max_error_fraction:
            self.fault = True
            self.warnings.append(f"{label}: {errors}/{trials} trials raised detector errors")

    def calibrate(self, det, n_trials: int | None = None):
        cfg = self.cfg
        res = harness.calibrate_threshold(
            det, cfg.scenario.null(), cfg.n_samples, cfg.pfa, n_trials or cfg.calibration_trials, cfg.seed,
            threads=cfg.threads, chunk_size=cfg.chunk_size,
        )
        self.warnings.extend(res.warnings)
        self.note_errors(f"{det.id} calibration", res.errors, res.n_trials)
        self.thresholds[det.id] = res.threshold
        return res

    def meta(self, command: str, **extra) -> dict:
        cfg = self.cfg
        return {
            "command": command,
            "db_convention": DB_CONVENTION,
            "K": cfg.n_samples,
            "N": cfg.scenario.base.dim,
            "pfa_target": cfg.pfa,
            "seed": cfg.seed,
            "calibration_trials": cfg.calibration_trials,
            "detector_options": {k: (list(v) if isinstance(v, tuple) else v)
                                 for k, v in cfg.detector_options.items()},
            "thresholds": self.thresholds,
            "warnings": self.warnings,
            **extra,
        }


def cmd_calibrate(cfg: RunConfig, out: Path | None) -> int:
    run = _Run(cfg)
    rows = []
    for d in cfg.detectors:
        det = cfg.detector(d)
        res = run.calibrate(det, cfg.calibration_trials)
        rows.append((d, cfg.n_samples, cfg.scenario.base.dim, cfg.pfa, res.threshold, res.n_trials, cfg.seed))
    _write_csv(out, SCHEMAS["calibrate"], rows)
    _write_meta(out, run.meta("calibrate", omega0={d: cfg.detector(d).domain_label(cfg.scenario.base.dim,
                                                                                   cfg.n_samples)
                                                   for d in cfg.detectors}))
    return EXIT_FAULT if run.fault else EXIT_OK


def cmd_pd_curve(cfg: RunConfig, out: Path | None) -> int:
    if cfg.scenario.kind == "none":
        raise ConfigError("pd-curve needs a scenario with an attack")
    run = _Run(cfg)
    rows = []
    onsets = cfg.pd_curve.resolve_onsets(cfg.n_samples)
    for d in cfg.detectors:
        det = cfg.detector(d)
        thr = run.calibrate(det).threshold
        for k0 in onsets:
            curve = harness.estimate_pd(det, cfg.scenario, cfg.n_samples, k0, cfg.pd_curve.grid_db, thr,
                                        cfg.trials, cfg.seed, threads=cfg.threads, chunk_size=cfg.chunk_size)
            for g, pd, err in zip(curve.grid_db, curve.pd, curve.errors):
                rows.append((d, cfg.n_samples, k0, curve.n_dims, curve.axis, g, pd, cfg.trials, err, cfg.seed))
                run.note_errors(f"{d} K0={k0} {curve.axis}={g}", int(err), cfg.trials)
    _write_csv(out, SCHEMAS["pd-curve"], rows)
    _write_meta(out, run.meta("pd-curve", attack=cfg.scenario.kind, onsets=list(onsets)))
    return EXIT_FAULT if run.fault else EXIT_OK


def cmd_pfa_sweep(cfg: RunConfig, out: Path | None) -> int:
    run = _Run(cfg)
    rows = []
    sw = cfg.pfa_sweep
    for d in cfg.detectors:
        det = cfg.detector(d)
        thr = run.calibrate(det).threshold
        curve = harness.pfa_sensitivity(det, cfg.scenario.base, sw.mismatch, sw.grid_db, thr, cfg.n_samples,
                                        cfg.trials, cfg.seed, threads=cfg.threads, chunk_size=cfg.chunk_size)
        for g, pfa, err in zip(curve.grid_db, curve.pfa, curve.errors):
            rows.append((d, cfg.n_samples, curve.n_dims, sw.mismatch, g, pfa, cfg.trials, cfg.seed))
            run.note_errors(f"{d} {sw.mismatch}={g}", int(err), cfg.trials)
    _write_csv(out, SCHEMAS["pfa-sweep"], rows)
    _write_meta(out, run.meta("pfa-sweep"))
    return EXIT_FAULT if run.fault else EXIT_OK


def cmd_em_convergence(cfg: RunConfig, out: Path | None) -> int:
    run = _Run(cfg)
    rows = []
    scenario = cfg.scenario.build(cfg.n_samples)
    for d in cfg.detectors:
        det = cfg.detector(d)
        if not det.is_mixture:
            raise ConfigError(f"em-convergence applies to nlj-lvm and sp-lvm, not {d}")
        res = harness.em_convergence(det, scenario, cfg.n_samples, cfg.trials, cfg.em_max_iters, cfg.seed,
                                     threads=cfg.threads, chunk_size=cfg.chunk_size)
        for h, rms, inc in zip(res.iterations, res.rms_delta, res.included):
            rows.append((d, h, rms, inc))
        run.note_errors(f"{d} em-convergence", int(res.excluded.max()), cfg.trials)
    _write_csv(out, SCHEMAS["em-convergence"], rows)
    _write_meta(out, run.meta("em-convergence", attack=scenario.kind, level_db=scenario.level_db,
                              onset=scenario.onset, max_iters=cfg.em_max_iters))
    return EXIT_FAULT if run.fault else EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path | None) -> int:
    """Calibrate, then measure P_fa on fresh null trials (not part of the CSV contract)."""
    run = _Run(cfg)
    rows = []
    for d in cfg.detectors:
        det = cfg.detector(d)
        thr = run.calibrate(det).threshold
        pfa, err = harness.empirical_pfa(det, cfg.scenario.null(), cfg.n_samples, thr, cfg.trials, cfg.seed,
                                         VALIDATION, cfg.threads, cfg.chunk_size)
        run.note_errors(f"{d} validation", err, cfg.trials)
        rows.append((d, cfg.n_samples, cfg.scenario.base.dim, cfg.pfa, thr, pfa, cfg.trials, cfg.seed))
    _write_csv(out, ("detector", "K", "N", "pfa_target", "threshold", "pfa", "trials", "seed"), rows)
    _write_meta(out, run.meta("validate"))
    return EXIT_FAULT if run.fault else EXIT_OK


def cmd_selftest(out: Path | None) -> int:
    from locsec.selftest import run_selftest

    results = run_selftest()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    if out:
        _write_csv(out, ("check", "passed", "detail"), [(r.name, r.passed, r.detail) for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


COMMANDS = {
    "calibrate": cmd_calibrate,
    "pd-curve": cmd_pd_curve,
    "pfa-sweep": cmd_pfa_sweep,
    "em-convergence": cmd_em_convergence,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="locsec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "selftest"):
        p = sub.add_parser(name)
        p.add_argument("--out", type=Path, help="output CSV (stdout when omitted)")
        if name == "selftest":
            continue
        p.add_argument("--config", type=Path, required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--detector", help="detector id, comma-separated ids, or 'all'")
        p.add_argument("--trials", type=int, help="trial count (calibration trials for 'calibrate')")
        p.add_argument("--threads", type=int, help="worker threads")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "selftest":
        return cmd_selftest(args.out)
    try:
        cfg = load_config(args.config)
        over = {"seed": args.seed, "threads": args.threads}
        if args.detector:
            over["detectors"] = parse_detectors(args.detector)
        if args.trials is not None:
            over["calibration_trials" if args.command == "calibrate" else "trials"] = args.trials
        cfg = cfg.override(**over)
        validate(cfg)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
