"""
Command-line harness: corpus generation, acquisition sessions, training,
single-dataset reconstruction and report regeneration.

Exit status: 0 success, 1 some subjects failed, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from activecine import __version__
from activecine.analysis import report
from activecine.config import ConfigError, build_session_config, load_file, merge, parse_methods
from activecine.container import CineContainer, atomic_write_text, load_container, save_container
from activecine.corpus import DEFAULT_COHORTS, Cohort, ParamRanges, generate_corpus, load_index
from activecine.engine import RECON_METHODS, AcquisitionLog, Session, SessionError, parse_schedule
from activecine.kspace import add_noise, fft2c, make_trajectory, rasterize_mask, synth_phase, undersample
from activecine.qc import STRATEGIES
from activecine.recon.cascade import CascadeConfig
from activecine.recon.training import TrainingDivergedError, gradient_check, train_cascade
from activecine.recon.weights_io import save_weights

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
GRADCHECK_TOL = 1e-4

log = logging.getLogger("activecine")


# ---------------------------------------------------------------------------
# gen-corpus
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args):
    if args.count < 1:
        raise ConfigError(f"--count must be at least 1, got {args.count}")
    cohorts = tuple(Cohort.parse(c) for c in args.cohort) if args.cohort else DEFAULT_COHORTS
    base = ParamRanges()
    scale = args.size / base.nx  # anatomy ranges are tuned for the default grid
    ranges = ParamRanges(lv_radius=tuple(scale * r for r in base.lv_radius),
                         wall_thickness=tuple(scale * w for w in base.wall_thickness),
                         nx=args.size, ny=args.size, nt=args.frames)
    index = generate_corpus(args.out, args.count, seed=args.seed, cohorts=cohorts, ranges=ranges)
    print(f"wrote {index['count']} subjects to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / report
# ---------------------------------------------------------------------------


def _run_one(task):
    config, sid = task
    try:
        return Session(config).run().to_dict()
    except SessionError as exc:
        return exc.log.to_dict()
    except Exception as exc:  # failure before the first step (e.g. bad container)
        failed = AcquisitionLog(sid, config.recon, config.to_dict(), status="failed",
                                error=f"{type(exc).__name__}: {exc}")
        return failed.to_dict()


def _log_name(log_dict):
    return f"{log_dict['subject']}__{log_dict['recon']}.json"


def write_reports(logs, out_dir):
    """Steps CSV, summary JSON, Bland-Altman pair/stat CSVs from log dicts."""
    out_dir = Path(out_dir)
    logs = sorted(logs, key=lambda lg: (lg["subject"], lg["recon"]))
    rows = [r for lg in logs for r in report.step_rows(lg)]
    atomic_write_text(out_dir / "steps.csv", report.rows_to_csv(rows))
    summary = report.summarize(logs)
    atomic_write_text(out_dir / "summary.json", report.summary_json(summary))
    pairs = report.biomarker_pairs(logs)
    atomic_write_text(out_dir / "bland_altman_pairs.csv", report.rows_to_csv(pairs, report.PAIR_COLUMNS))
    atomic_write_text(out_dir / "bland_altman_stats.csv",
                      report.rows_to_csv(report.agreement_rows(summary), report.AGREEMENT_COLUMNS))
    return summary


def _flag_values(args):
    return {
        "seed": args.seed, "recon": args.recon, "weights": args.weights,
        "qc1": args.qc1, "qc1_threshold": args.qc1_threshold, "qc1_weights": args.qc1_weights,
        "qc2": args.qc2, "qc2_threshold": args.qc2_threshold, "qc2_weights": args.qc2_weights,
        "tr_ms": args.tr_ms, "frames": args.frames, "schedule": args.schedule,
        "full_spokes": args.full_spokes, "out": args.out, "workers": args.workers,
    }


def _merged_values(args):
    file_values = load_file(args.config) if args.config else {}
    return merge(file_values, _flag_values(args))


def cmd_simulate(args):
    values = _merged_values(args)
    if not values.get("out"):
        raise ConfigError("simulate needs an output directory (--out or 'out' in the config)")
    try:
        index = load_index(args.corpus)
    except (FileNotFoundError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    methods = values.get("recon", ("nufft",))
    corpus = Path(args.corpus)
    tasks = []
    for method in methods:
        for entry in index["subjects"]:
            cfg = build_session_config(values, method, container=str(corpus / entry["file"]),
                                       subject=entry["subject"])
            tasks.append((cfg, entry["subject"]))

    workers = values.get("workers") or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(_run_one, tasks))
    else:
        logs = [_run_one(t) for t in tasks]

    out = Path(values["out"])
    for lg in logs:
        atomic_write_text(out / "logs" / _log_name(lg),
                          json.dumps(lg, indent=2, sort_keys=True, allow_nan=False) + "\n")
    summary = write_reports(logs, out)
    for method, ms in summary["methods"].items():
        pt = ms["passing_time_s"]
        mean = "n/a" if pt["mean"] is None else f"{pt['mean']:.2f} +/- {pt['sd']:.2f} s"
        print(f"{method}: {ms['n_passed']}/{ms['n_subjects']} passed, mean passing time {mean}")
    failed = [lg for lg in logs if lg["status"] == "failed"]
    for lg in failed:
        print(f"FAILED {lg['subject']} ({lg['recon']}): {lg['error']}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_report(args):
    log_dir = Path(args.logs)
    files = sorted(log_dir.glob("*.json"))
    if not files:
        raise ConfigError(f"no log files in {log_dir}")
    logs = []
    for f in files:
        d = json.loads(f.read_text())
        AcquisitionLog.from_dict(d)  # schema check
        logs.append(d)
    write_reports(logs, args.out)
    print(f"summarised {len(logs)} logs into {args.out}")
    return EXIT_PARTIAL if any(lg["status"] == "failed" for lg in logs) else EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def training_pair(magnitude, P, seed, subject_seed, scheme="golden", tr_ms=2.6,
                  noise_psnr_db=40.0, phase_cutoff=0.1, dcf="ring"):
    """(KSpaceData, reference) for one magnitude stack at P spokes per frame."""
    nt, ny, nx = magnitude.shape
    x = synth_phase(magnitude, phase_cutoff, seed=[seed, subject_seed, 0])
    x = add_noise(x, noise_psnr_db, seed=[seed, subject_seed, 1])
    mask = rasterize_mask(make_trajectory(scheme, P, nt, tr_ms), nx, ny)
    return undersample(fft2c(x), mask, dcf=dcf), x


def _center_crop(stack, size):
    _, ny, nx = stack.shape
    y0, x0 = (ny - size) // 2, (nx - size) // 2
    return stack[:, y0:y0 + size, x0:x0 + size]


def cmd_train(args):
    try:
        index = load_index(args.corpus)
    except (FileNotFoundError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    entries = index["subjects"][:args.subjects] if args.subjects else index["subjects"]
    if not entries:
        raise ConfigError("training corpus has no subjects")
    config = CascadeConfig(n_cascades=args.cascades, n_layers=args.layers, channels=args.channels,
                           regularizer="conv", lambda_init=args.lambda_init)
    pairs, stacks = [], []
    for entry in entries:
        box = load_container(Path(args.corpus) / entry["file"])
        mag = np.asarray(box["image"], dtype=np.float64)[:args.train_frames]
        stacks.append((mag, int(box.attrs.get("seed", 0))))
        pairs.append(training_pair(mag, args.profiles, args.seed, stacks[-1][1]))

    out = Path(args.out)
    try:
        result = train_cascade(pairs, config, lr=args.lr, epochs=args.epochs, seed=args.seed)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    save_weights(out, result.weights)
    loss_csv = "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.history))
    atomic_write_text(out.with_suffix(".loss.csv"), loss_csv)
    print(f"loss {result.history[0]:.6g} -> {min(result.history):.6g} (best epoch {result.best_epoch}); "
          f"weights written to {out}")

    if args.gradient_check:
        mag, subject_seed = stacks[0]
        small = _center_crop(mag[:2], 16)
        sample = training_pair(small, args.profiles, args.seed, subject_seed)
        err = gradient_check(result.weights, config, sample, probes=25, seed=args.seed)
        ok = err <= GRADCHECK_TOL
        print(f"gradient check: max relative error {err:.3e} ({'ok' if ok else 'FAILED'})")
        if not ok:
            return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# recon
# ---------------------------------------------------------------------------


def cmd_recon(args):
    values = _merged_values(args)
    methods = values.get("recon", ("nufft",))
    if len(methods) != 1:
        raise ConfigError("recon takes a single --recon method")
    if not values.get("out"):
        raise ConfigError("recon needs an output directory (--out)")
    if not Path(args.container).exists():
        raise ConfigError(f"container not found: {args.container}")
    cfg = build_session_config(values, methods[0], container=args.container)
    cfg = replace(cfg, schedule=(args.scan_time, args.scan_time, 1.0))
    session = Session(cfg)
    record = session.step_once(args.scan_time)
    recon, mask = session.latest
    out = Path(values["out"])
    arrays = {"recon": recon.astype(np.complex64)}
    if mask is not None:
        arrays["labels"] = mask.labels
    m = session.subject.magnitude
    attrs = {"subject": session.subject.subject, "recon": cfg.recon, "scan_time_s": args.scan_time}
    save_container(out / "recon.acine", CineContainer(arrays, m.dx, m.dy, m.thickness, cfg.tr_ms, attrs))
    step = {k: v for k, v in record.items() if k != "wall_ms"}
    log_dict = AcquisitionLog(session.subject.subject, cfg.recon, cfg.to_dict(), steps=[step]).to_dict()
    atomic_write_text(out / "step.json", json.dumps(log_dict["steps"][0], indent=2, sort_keys=True) + "\n")
    q1 = record["qc1"]
    print(f"P = {record['P']}, R = {record['R']:.2f}, SSIM = {record['metrics']['SSIM']:.4f}, "
          f"QC1 {'pass' if q1['passed'] else 'fail'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _session_flags(p):
    p.add_argument("--config", help="flat key = value config file (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--recon", type=_recon_list,
                   help=f"reconstruction method(s), comma separated: {', '.join(RECON_METHODS)}")
    p.add_argument("--weights", help="cascade-conv weights manifest")
    p.add_argument("--qc1", choices=STRATEGIES)
    p.add_argument("--qc1-threshold", type=float)
    p.add_argument("--qc1-weights")
    p.add_argument("--qc2", choices=STRATEGIES)
    p.add_argument("--qc2-threshold", type=float)
    p.add_argument("--qc2-weights")
    p.add_argument("--tr-ms", type=float)
    p.add_argument("--frames", type=int)
    p.add_argument("--schedule", type=parse_schedule, help="START:STOP:STEP in seconds")
    p.add_argument("--full-spokes", type=float)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, help="parallel sessions (default 1)")


def _recon_list(text):
    try:
        return parse_methods(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="activecine", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a seeded phantom corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--cohort", action="append", metavar="TAG:LO:HI",
                   help="EF cohort (repeatable); default disease:0.25:0.45 and healthy:0.55:0.70")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--size", type=int, default=96, help="square grid size in pixels")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("simulate", help="run one acquisition session per subject and method")
    p.add_argument("corpus")
    _session_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the conv cascade on a corpus")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="weights manifest path (.json)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profiles", type=int, default=30, help="spokes per frame (P)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=3.0)
    p.add_argument("--cascades", type=int, default=3)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--lambda-init", type=float, default=1.0)
    p.add_argument("--subjects", type=int, help="use only the first N subjects")
    p.add_argument("--train-frames", type=int, default=4, help="frames per subject used for training")
    p.add_argument("--gradient-check", action="store_true",
                   help=f"finite-difference check after training (fails above {GRADCHECK_TOL:g})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recon", help="reconstruct one dataset at a fixed scan time")
    p.add_argument("container")
    p.add_argument("--scan-time", type=float, required=True)
    _session_flags(p)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("report", help="recompute CSV and summary files from logs")
    p.add_argument("logs", help="directory of acquisition log JSON files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
