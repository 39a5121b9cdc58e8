"""Command-line entry point: ``tshn synth | train | sweep``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .distiller import TrainConfig
from .errors import (
    ConfigError,
    InsufficientTrusted,
    InvalidPair,
    SegmentationError,
    TshnError,
    UnsupportedModulation,
)
from .evalbench import METHODS, RunSpec, format_table, run_one, sweep
from .mvs import MvsConfig
from .noiselab import parse_noise
from .sigsynth import ALL_SCHEMES, DEFAULT_CLASSES, ELEVEN_CLASSES, DatasetRequest, generate_dataset, load_dataset

log = logging.getLogger("tshn")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# Config document layout. Every key is optional; unknown keys are rejected.
DATA_KEYS = {"path", "classes", "per_class", "snrs", "length", "samples_per_symbol", "seed", "random_phase"}
RUN_KEYS = {"name", "runs_dir", "method", "noise", "trusted_fraction", "trusted_per_class", "seed", "snr_min"}
SWEEP_KEYS = {"rates", "methods", "seeds", "noise_kind", "out", "jobs"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
MVS_KEYS = {f.name for f in fields(MvsConfig)}
LOSS_KEYS = {"epsilon", "delta"}
SECTIONS = {"data": DATA_KEYS, "run": RUN_KEYS, "sweep": SWEEP_KEYS, "train": TRAIN_KEYS, "mvs": MVS_KEYS,
            "loss": LOSS_KEYS}


class UsageError(TshnError):
    pass


def load_config(path) -> dict:
    """Read a JSON config and reject unknown sections or keys."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    return check_config(doc)


def check_config(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    for sec, body in doc.items():
        if sec not in SECTIONS:
            raise UsageError(f"unknown config section {sec!r}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise UsageError(f"section {sec!r} must be an object")
        bad = sorted(set(body) - SECTIONS[sec])
        if bad:
            raise UsageError(f"unknown key(s) in {sec!r}: {', '.join(bad)}")
    return {k: dict(v or {}) for k, v in doc.items()}


# -------------------------------------------------------------- flag parsing

def parse_classes(text) -> tuple[str, ...]:
    if isinstance(text, (list, tuple)):
        names = tuple(text)
    elif str(text).isdigit():
        n = int(text)
        if n == len(DEFAULT_CLASSES):
            return DEFAULT_CLASSES
        if n == len(ELEVEN_CLASSES):
            return ELEVEN_CLASSES
        raise UsageError(f"--classes {n}: only 8 or 11 are predefined; list names instead")
    else:
        names = tuple(t.strip() for t in str(text).split(",") if t.strip())
    for n in names:
        if n not in ALL_SCHEMES:
            raise UsageError(f"unknown class {n!r} (choose from {', '.join(ALL_SCHEMES)})")
    return names


def parse_ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError as e:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from e


def parse_floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError as e:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from e


def parse_mvs(text) -> dict:
    """``N=4,views=20[,min=8]`` -> MvsConfig keyword arguments."""
    alias = {"n": "n_segments", "views": "views_per_sample", "min": "min_segment_len"}
    out = {}
    for tok in str(text).split(","):
        if not tok.strip():
            continue
        key, _, val = tok.partition("=")
        key = alias.get(key.strip().lower(), key.strip())
        if key not in MVS_KEYS or not val:
            raise UsageError(f"bad --mvs token {tok!r}")
        out[key] = int(val)
    return out


def resolve_seed(flag, section: dict) -> int:
    if flag is not None:
        return int(flag)
    if section.get("seed") is not None:
        return int(section["seed"])
    env = os.environ.get("TSHN_SEED")
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise UsageError(f"TSHN_SEED must be an integer, got {env!r}") from e
    return 0


def _merge(base: dict, **flags) -> dict:
    out = dict(base)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _dataset(data: dict):
    if data.get("path"):
        return load_dataset(data["path"])[1]
    req = DatasetRequest(
        classes=parse_classes(data.get("classes", 8)),
        per_class=int(data.get("per_class", 200)),
        snrs=parse_ints(data.get("snrs", "0,10,18")),
        length=int(data.get("length", 128)),
        samples_per_symbol=int(data.get("samples_per_symbol", 8)),
        seed=int(data.get("seed", 0)),
        random_phase=bool(data.get("random_phase", False)),
    )
    return generate_dataset(req)[1]


def _train_config(train: dict, seed: int) -> TrainConfig:
    try:
        return TrainConfig(**train, seed=seed)
    except TypeError as e:
        raise UsageError(str(e)) from e


# ------------------------------------------------------------------ commands

def cmd_synth(args, cfg) -> int:
    data = _merge(cfg.get("data", {}), classes=args.classes, per_class=args.per_class, snrs=args.snrs,
                  length=args.length, samples_per_symbol=args.sps)
    data["seed"] = resolve_seed(args.seed, data)
    req = DatasetRequest(classes=parse_classes(data.get("classes", 8)), per_class=int(data.get("per_class", 200)),
                         snrs=parse_ints(data.get("snrs", "0,10,18")), length=int(data.get("length", 128)),
                         samples_per_symbol=int(data.get("samples_per_symbol", 8)), seed=data["seed"],
                         random_phase=bool(data.get("random_phase", False)))
    out = Path(args.output)
    manifest, _ = generate_dataset(req, out)
    print(manifest.to_json())
    return EXIT_OK


def _run_section(args, cfg):
    run = _merge(cfg.get("run", {}), method=args.method, noise=args.noise, trusted_fraction=args.trusted_frac,
                 name=args.name, runs_dir=args.runs_dir)
    run["seed"] = resolve_seed(args.seed, run)
    run.setdefault("method", "tshn")
    run.setdefault("noise", "sym:0.0")
    run.setdefault("trusted_fraction", 0.01)
    if run["method"] not in METHODS:
        raise UsageError(f"unknown method {run['method']!r}")
    return run


def cmd_train(args, cfg) -> int:
    run = _run_section(args, cfg)
    data = _merge(cfg.get("data", {}), path=args.data)
    train = _merge(cfg.get("train", {}), episodes=args.episodes, epochs=args.epochs)
    mvs = dict(cfg.get("mvs", {}))
    if args.mvs:
        mvs.update(parse_mvs(args.mvs))
    seed = run["seed"]
    tcfg = _train_config(train, seed)  # validate before any compute
    ds = _dataset(data)
    noise = parse_noise(run["noise"], ds.class_names)
    mcfg = MvsConfig(**{**mvs, "rng_seed": mvs.get("rng_seed", seed)}) if mvs else None
    if run["method"] == "glc" and run["trusted_fraction"] == 0 and run.get("trusted_per_class") is None:
        raise InsufficientTrusted(list(ds.class_names), "glc needs trusted samples (--trusted-frac is 0)")
    name = run.get("name") or f"{run['method']}_{noise.kind}{noise.rate:g}_s{seed}"
    run_dir = Path(run.get("runs_dir") or "runs") / name
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "data": data, "run": {**run, "name": name}, "train": {k: v for k, v in tcfg.to_dict().items() if k != "seed"},
        "loss": cfg.get("loss", {}),
    }
    if mcfg:
        snapshot["mvs"] = asdict(mcfg)
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    spec = RunSpec(run["method"], noise, seed, float(run["trusted_fraction"]), mcfg,
                   run.get("snr_min", 0), trusted_per_class=run.get("trusted_per_class"))
    report = run_one(ds, spec, tcfg, run_dir)
    body = report.to_dict()
    body.pop("wall_clock")  # kept out so reruns compare byte-identically
    (run_dir / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    with open(run_dir / "report.csv", "w") as fh:
        fh.write("method,rate,seed,accuracy\n")
        fh.write(f"{report.method},{report.rate},{report.seed},{report.accuracy}\n")
    print(f"{report.method} {noise.kind}:{noise.rate:g} seed={seed} accuracy={report.accuracy:.4f} -> {run_dir}")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    sw = _merge(cfg.get("sweep", {}), rates=args.rates, methods=args.methods, seeds=args.seeds,
                noise_kind=args.noise_kind, out=args.out, jobs=args.jobs)
    run = cfg.get("run", {})
    data = _merge(cfg.get("data", {}), path=args.data)
    train = _merge(cfg.get("train", {}), episodes=args.episodes, epochs=args.epochs)
    rates = parse_floats(sw.get("rates", "0,0.2,0.4,0.6,0.8,1.0"))
    methods = tuple(m.strip() for m in (sw.get("methods") or "tshn,ce").split(",")) \
        if isinstance(sw.get("methods", "tshn,ce"), str) else tuple(sw["methods"])
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    seeds = parse_ints(sw.get("seeds", str(resolve_seed(None, run))))
    kind = sw.get("noise_kind", "sym")
    trusted = float(_merge(run, trusted_fraction=args.trusted_frac).get("trusted_fraction", 0.01))
    tcfg = _train_config(train, seeds[0] if seeds else 0)
    ds = _dataset(data)
    specs = []
    for rate in rates:
        noise = parse_noise(f"{kind}:{rate}", ds.class_names)
        for m in methods:
            for s in seeds:
                specs.append(RunSpec(m, noise, s, trusted, snr_min=run.get("snr_min", 0)))
    out = Path(sw.get("out") or "sweep")
    reports = sweep(ds, specs, out, tcfg, jobs=int(sw.get("jobs", 1)))
    failed = [r for r in reports if r.error]
    for r in failed:
        log.error("run %s failed: %s", r.key, r.error.splitlines()[0])
    table = format_table(reports, noise_kind=parse_noise(f"{kind}:0", ds.class_names).kind)
    if args.emit_table1:
        (out / "table1.txt").write_text(table + "\n")
        print(table)
    print(f"{len(reports) - len(failed)}/{len(reports)} runs ok -> {out}")
    return EXIT_RUNTIME if reports and len(failed) == len(reports) else EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tshn", description="Label-noise robust modulation classification toolkit")
    p.add_argument("--config", help="JSON config; command-line flags override it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic IQ dataset")
    s.add_argument("--classes", help="8, 11 or a comma-separated list of scheme names")
    s.add_argument("--per-class", type=int, help="records per (class, snr)")
    s.add_argument("--snrs", help="comma-separated SNR grid in dB")
    s.add_argument("--length", type=int)
    s.add_argument("--sps", type=int, help="samples per symbol")
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)

    def common(q):
        q.add_argument("--data", help="dataset directory (synthesized from the config if omitted)")
        q.add_argument("--trusted-frac", type=float)
        q.add_argument("--episodes", type=int)
        q.add_argument("--epochs", type=int)
        q.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)

    t = sub.add_parser("train", help="train one method on one noisy split")
    common(t)
    t.add_argument("--method", choices=METHODS)
    t.add_argument("--noise", help="sym:0.8 | flip:QAM16-QAM64,QPSK-8PSK:0.6 | mixed:0.6")
    t.add_argument("--mvs", help="multi-view expansion of the trusted pool, e.g. N=4,views=20")
    t.add_argument("--seed", type=int)
    t.add_argument("--name", help="run name (default derived from method, noise and seed)")
    t.add_argument("--runs-dir", help="parent of the run directory (default runs/)")

    w = sub.add_parser("sweep", help="noise-rate x method x seed grid")
    common(w)
    w.add_argument("--rates", help="comma-separated noise rates")
    w.add_argument("--methods", help="comma-separated methods")
    w.add_argument("--seeds", help="comma-separated seeds")
    w.add_argument("--noise-kind", choices=("sym", "flip", "mixed"))
    w.add_argument("--out")
    w.add_argument("--jobs", type=int)
    w.add_argument("--emit-table1", action="store_true", help="print and save the accuracy table")
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        config_path = getattr(args, "sub_config", None) or args.config
        cfg = load_config(config_path) if config_path else {}
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, UnsupportedModulation, InsufficientTrusted, InvalidPair,
            SegmentationError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TshnError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
