"""Command-line entry point: ``sigfuse {preprocess,extract,synth,run}``.

Settings resolve as command line > ``--config`` JSON file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import SigfuseError
from .evalkit import Corpus, ExperimentConfig, run_experiment, synth_corpus, write_cmc_csv
from .featex import extract_features, write_features_csv
from .matchers import MatcherConfig
from .raster import PreprocessConfig, preprocess, read_image, write_pgm
from .svmfuse import MODEL_VERSION, Kernel, TrainConfig

log = logging.getLogger("sigfuse")

RASTER_SUFFIXES = {".pgm", ".png"}

DEFAULTS = {
    "width": 512,
    "height": 256,
    "median": 3,
    "mean": 3,
    "hpr_factor": 0.75,
    "seed": 0,
    "forgers": 8,
    "enroll": 6,
    "probe": 3,
    "kernel": "rbf",
    "gamma": 1.0 / 3.0,
    "c": 10.0,
    "k": 3,
    "lam": 0.9,
    "impostor_ratio": 1.0,
}


def _resolve(args: argparse.Namespace) -> dict:
    """Merge command line over config file over defaults."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            settings.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise SigfuseError(f"cannot read config {args.config}: {exc}") from exc
    for key, value in vars(args).items():
        if value is not None and key not in ("func", "config"):
            settings[key] = value
    return settings


def _preprocess_config(s: dict) -> PreprocessConfig:
    return PreprocessConfig(s["width"], s["height"], s["median"], s["mean"], s["hpr_factor"])


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, help="normalized width in pixels (512)")
    p.add_argument("--height", type=int, help="normalized height in pixels (256)")
    p.add_argument("--median", type=int, help="median filter window, odd (3)")
    p.add_argument("--mean", type=int, help="mean filter window, odd (3)")
    p.add_argument("--hpr-factor", dest="hpr_factor", type=float, help="high-pressure factor in (0, 1) (0.75)")
    p.add_argument("--config", help="JSON file with default settings")


def cmd_preprocess(args) -> int:
    s = _resolve(args)
    cfg = _preprocess_config(s)
    src, dst = Path(s["input"]), Path(s["output"])
    if not src.is_dir():
        log.error("input directory %s does not exist", src)
        return 2
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in RASTER_SUFFIXES)
    if not files:
        log.warning("no PGM or PNG rasters in %s", src)
        return 0
    dst.mkdir(parents=True, exist_ok=True)
    failures = []
    for path in files:
        try:
            iset = preprocess(read_image(path), cfg)
        except SigfuseError as exc:
            failures.append((path.name, str(exc)))
            continue
        for stage in ("gray", "binary", "thinned", "hpr"):
            write_pgm(dst / f"{path.stem}_{stage}.pgm", getattr(iset, stage))
    for name, msg in failures:
        print(f"FAILED {name}: {msg}", file=sys.stderr)
    print(f"preprocessed {len(files) - len(failures)} of {len(files)} rasters")
    return 1 if failures else 0


def cmd_extract(args) -> int:
    s = _resolve(args)
    cfg = _preprocess_config(s)
    corpus = Corpus.load(s["manifest"])
    rows = []
    for sample in corpus.samples:
        rows.append((sample.subject_id, sample.sample_id, extract_features(preprocess(sample.load(), cfg))))
    write_features_csv(s["out"], rows)
    print(f"wrote {len(rows)} feature vectors to {s['out']}")
    return 0


def cmd_synth(args) -> int:
    s = _resolve(args)
    corpus = synth_corpus(s["subjects"], s["samples"], s["forgers"], s["seed"])
    path = corpus.write(s["out"])
    print(f"wrote {len(corpus.samples)} rasters and {path}")
    return 0


def _experiment_config(s: dict) -> ExperimentConfig:
    return ExperimentConfig(
        preprocess=_preprocess_config(s),
        matcher=MatcherConfig(k=s["k"], shrinkage_lambda=s["lam"], split_seed=s["seed"]),
        train=TrainConfig(c_reg=s["c"], seed=s["seed"], kernel=Kernel(s["kernel"], s["gamma"])),
        n_enroll=s["enroll"],
        n_probe=s["probe"],
        impostor_ratio=s["impostor_ratio"],
    )


def cmd_run(args) -> int:
    s = _resolve(args)
    stage = "configuration"
    try:
        if (s.get("manifest") is None) == (s.get("synth") is None):
            raise SigfuseError("give exactly one of --manifest or --synth N_SUBJECTS N_SAMPLES")
        cfg = _experiment_config(s)
        stage = "corpus"
        if s.get("manifest") is not None:
            if not Path(s["manifest"]).is_file():
                raise SigfuseError(f"manifest {s['manifest']} not found")
            corpus = Corpus.load(s["manifest"])
        else:
            n_subjects, n_samples = s["synth"]
            corpus = synth_corpus(n_subjects, n_samples, s["forgers"], s["seed"])
        stage = "experiment"
        report = run_experiment(corpus, cfg, s["seed"])
    except SigfuseError as exc:
        print(f"error during {stage}: {exc}", file=sys.stderr)
        return 2

    effective = {k: v for k, v in s.items() if k != "out"}
    if effective.get("synth") is not None:
        effective["synth"] = list(effective["synth"])
    report["run"] = effective
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    write_cmc_csv(out / "cmc.csv", report)
    for name in ("ed", "md", "ge", "fused"):
        print(f"rank-1 {name:>5}: {report['rank1'][name]:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigfuse", description="Offline signature identification by SVM score fusion.")
    parser.add_argument("--version", action="version", version=MODEL_VERSION)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="write the four preprocessing stages of every raster as PGM")
    p.add_argument("input")
    p.add_argument("output")
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("extract", help="feature vectors of a corpus manifest as CSV")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate a synthetic corpus with manifest")
    p.add_argument("subjects", type=int)
    p.add_argument("samples", type=int)
    p.add_argument("--forgers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the identification experiment")
    p.add_argument("--manifest")
    p.add_argument("--synth", nargs=2, type=int, metavar=("N_SUBJECTS", "N_SAMPLES"))
    p.add_argument("--forgers", type=int, help="forger subjects for --synth (8)")
    p.add_argument("--seed", type=int)
    p.add_argument("--enroll", type=int)
    p.add_argument("--probe", type=int)
    p.add_argument("--kernel", choices=("linear", "rbf"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--k", type=int, choices=(1, 2, 3))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--impostor-ratio", dest="impostor_ratio", type=float)
    p.add_argument("--out", required=True)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    del args.verbose, args.command
    try:
        return args.func(args)
    except SigfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
