"""Command-line entry point: dsta {gen-data,train,eval,ablate,bench,gradcheck}."""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from pathlib import Path

from .backbone import ConfigError
from .config import RunConfig
from .dataset import BLOB, MANIFEST, DatasetFormatError, generate_dataset, read_dataset, write_dataset
from .train import CheckpointError, CheckpointFormatError, NaNLossError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CHECK, EXIT_NAN = 0, 2, 3, 4, 5

log = logging.getLogger("dsta")


class CheckFailure(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config(args, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.override(overrides or {})


# -- commands ----------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    cfg = _config(args, {"data.T": args.T})
    count = cfg.data.train_count if args.count is None else args.count
    if count < 0:
        raise ConfigError("--count must be >= 0")
    d = cfg.data
    data = generate_dataset(count, args.split, cfg.seed, d.T, d.H, d.W, corruption=cfg.corruption_config(),
                            dynamics=cfg.dynamics(), augment=cfg.augmentation())
    out = Path(args.out or cfg.paths.dataset)
    write_dataset(data, out)
    print(f"wrote {len(data)} samples ({args.split}, T={d.T}) to {out}")
    for name in (MANIFEST, BLOB):
        print(f"sha256 {name} {_sha256(out / name)}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .evaluation import pck_eval
    from .model import DstaModel
    from .train import save_checkpoint, train

    cfg = _config(args, {"train.epochs": args.epochs, "train.lr": args.lr, "train.batch_size": args.batch_size,
                         "model.mode": args.mode, "model.jfd_mode": args.jfd_mode, "model.T": args.model_T})
    data = read_dataset(args.data or cfg.paths.dataset)
    val = read_dataset(args.val) if args.val else None
    cfg = cfg.override({"data.H": data.H, "data.W": data.W})  # the clips fix the image size
    mcfg = cfg.model_config(n=data.n)
    if mcfg.T > data.T:
        raise ConfigError(f"model span T={mcfg.T} exceeds dataset span T={data.T}")
    model = DstaModel(mcfg)
    out = Path(args.out or cfg.paths.checkpoint)
    metrics = Path(args.metrics) if args.metrics else out.with_suffix(".metrics.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    train(model, data, cfg.train_config(), val=val, metrics_path=metrics,
          evaluate=(lambda m, d: pck_eval(m, d).mean[0.2]) if val is not None else None)
    save_checkpoint(model, out)
    print(f"checkpoint {out} sha256 {_sha256(out)}")
    print(f"metrics {metrics}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import pck_eval
    from .train import load_checkpoint

    data = read_dataset(args.data)
    model = load_checkpoint(args.checkpoint, expect={"n": data.n, "H": data.H, "W": data.W})
    if model.cfg.T > data.T:
        raise ConfigError(f"checkpoint span T={model.cfg.T} exceeds dataset span T={data.T}")
    res = pck_eval(model, data, mode=args.mode)
    split = data.split or "?"
    print(f"split {split} clips {res.count} mode {args.mode or model.cfg.mode}")
    for a in res.thresholds:
        print(f"PCK@{a}: {res.mean[a]:.4f}")
    if args.csv:
        path = Path(args.csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "metric", "joint", "value"])
            for a in res.thresholds:
                w.writerow([split, f"pck@{a}", "mean", f"{res.mean[a]:.6f}"])
                for j, v in enumerate(res.per_joint[a]):
                    w.writerow([split, f"pck@{a}", j, f"{v:.6f}"])
        print(f"csv {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import SUITES, required_span, run_ablation

    cfg = _config(args, {"train.epochs": args.epochs, "data.train_count": args.train_count,
                         "data.val_count": args.val_count})
    suites = SUITES if args.suite == "all" else (args.suite,)
    base = cfg.model_config()
    T = max(cfg.data.T, *(required_span(s, base) for s in suites))
    d = cfg.data
    common = dict(seed=cfg.seed, T=T, H=d.H, W=d.W, corruption=cfg.corruption_config(),
                  dynamics=cfg.dynamics(), augment=cfg.augmentation())
    train_data = generate_dataset(d.train_count, "train", **common)
    evals = {s: generate_dataset(d.val_count, s, **common) for s in ("val", "val-occluded")}
    seeds = tuple(range(args.seeds))
    out = Path(args.out or cfg.paths.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache: dict = {}
    for suite in suites:
        rep = run_ablation(suite, base, train_data, evals, cfg.train_config(), seeds, args.workers, cache)
        (out / f"ablation_{suite}.md").write_text(rep.to_markdown())
        (out / f"ablation_{suite}.csv").write_text(rep.to_csv())
        print(rep.to_markdown())
        print(f"rows {len(rep.cells)} -> {out / f'ablation_{suite}.csv'}")
    return EXIT_OK


def _parse_bench_configs(text: str):
    from .bench import BenchConfig

    out = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        try:
            vals = [int(v) for v in part.split(",")]
            out.append(BenchConfig(*vals))
        except (TypeError, ValueError):
            raise ConfigError(f"bad bench config {part!r}; expected n,T,K[,D,layers,heads]") from None
    if not out:
        raise ConfigError("no bench configs given")
    return out


def cmd_bench(args) -> int:
    from .bench import DEFAULT_CONFIGS, PairCountMismatch, pair_count_bench, reports_json

    configs = _parse_bench_configs(args.configs) if args.configs else list(DEFAULT_CONFIGS)
    if args.runs < 100 and not args.no_timing:
        log.warning("fewer than 100 timed runs; medians will be noisy")
    try:
        reports = pair_count_bench(configs, args.runs, args.warmup, args.batch, timing=not args.no_timing)
    except PairCountMismatch as e:
        raise CheckFailure(str(e)) from None
    for r in reports:
        c = r.config
        line = (f"n={c['n']} T={c['T']} K={c['K']}: coupled {r.measured['coupled']} "
                f"decoupled {r.measured['decoupled']} pairs/layer/head, ratio {r.exact_ratio:.4g} "
                f"(asymptotic 9K={r.asymptotic_ratio})")
        if r.time_ms:
            line += (f"; {r.time_ms['coupled']:.3f} ms vs {r.time_ms['decoupled']:.3f} ms "
                     f"(x{r.speedup:.2f}, batch {r.batch})")
        print(line)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(reports_json(reports))
        print(f"report {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import check_models, check_ops

    results = check_ops() if args.scope == "ops" else check_models(jfd_modes=tuple(args.jfd))
    bad = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        bad += not r.passed
        print(f"{status:4} {r.name:24} rel err {r.error:.3e} (tol {r.tolerance:g})")
    if bad:
        raise CheckFailure(f"{bad} of {len(results)} gradient checks failed")
    print(f"all {len(results)} {args.scope} checks passed")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="dsta", description="Decoupled space-time aggregation for pose regression "
                                "on synthetic skeleton clips.", formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset split", formatter_class=fmt)
    g.add_argument("--config", help="JSON run config")
    g.add_argument("--out", help="output directory (default: paths.dataset)")
    g.add_argument("--split", choices=("train", "val", "val-occluded"), default="train", help="dataset split")
    g.add_argument("--count", type=int, help="number of clips (default: data.train_count)")
    g.add_argument("--seed", type=int, help="generation seed (default: config seed)")
    g.add_argument("--T", type=int, help="clip span, 2T+1 frames (default: data.T)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint", formatter_class=fmt)
    t.add_argument("--config", help="JSON run config")
    t.add_argument("--data", help="training dataset directory (default: paths.dataset)")
    t.add_argument("--val", help="validation dataset directory for per-epoch PCK")
    t.add_argument("--out", help="checkpoint path (default: paths.checkpoint)")
    t.add_argument("--metrics", help="metrics JSONL path (default: next to the checkpoint)")
    t.add_argument("--seed", type=int, help="model and shuffling seed")
    t.add_argument("--epochs", type=int, help="override train.epochs")
    t.add_argument("--lr", type=float, help="override train.lr")
    t.add_argument("--batch-size", type=int, help="override train.batch_size")
    t.add_argument("--mode", choices=("full", "td_only", "sd_only", "coupled", "single_frame"),
                   help="override model.mode")
    t.add_argument("--jfd-mode", choices=("fc", "conv", "coord_embed"), help="override model.jfd_mode")
    t.add_argument("--model-T", type=int, help="override model.T (symmetric span)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PCK of a checkpoint on a dataset", formatter_class=fmt)
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--mode", choices=("full", "td_only", "sd_only", "coupled", "single_frame"),
                   help="evaluate in another mode (default: the trained mode)")
    e.add_argument("--csv", help="write per-joint results to this CSV")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation suite", formatter_class=fmt)
    a.add_argument("--suite", choices=("modules", "aux_frames", "token_size", "jfd_choice", "all"),
                   default="modules", help="which table to reproduce")
    a.add_argument("--config", help="JSON run config")
    a.add_argument("--seeds", type=int, default=3, help="number of seeds (0..N-1)")
    a.add_argument("--seed", type=int, help="data generation seed")
    a.add_argument("--epochs", type=int, help="override train.epochs")
    a.add_argument("--train-count", type=int, help="override data.train_count")
    a.add_argument("--val-count", type=int, help="override data.val_count")
    a.add_argument("--workers", type=int, default=1, help="parallel (config, seed) cells")
    a.add_argument("--out", help="report directory (default: paths.report_dir)")
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="attention pair counts and wall-clock", formatter_class=fmt)
    b.add_argument("--configs", help="';'-separated n,T,K[,D,layers,heads] tuples "
                   "(default: 15,1,5;15,0,5;60,4,5)")
    b.add_argument("--runs", type=int, default=100, help="timed runs per path")
    b.add_argument("--warmup", type=int, default=10, help="discarded warmup runs")
    b.add_argument("--batch", type=int, default=16, help="clips per forward pass (default: the training batch)")
    b.add_argument("--no-timing", action="store_true", help="only check pair counts")
    b.add_argument("--out", help="write the JSON report here")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks", formatter_class=fmt)
    c.add_argument("--scope", choices=("ops", "model"), default="ops", help="single ops or the whole model")
    c.add_argument("--jfd", nargs="+", default=["fc", "conv"], choices=("fc", "conv"),
                   help="decoders covered by --scope model")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointFormatError, DatasetFormatError, OSError, NaNLossError,
            CheckpointError, CheckFailure, ValueError) as e:
        code = _exit_code(e)
        field = getattr(e, "field", None)
        print(f"error: {e}" + (f" [field: {field}]" if field else ""), file=sys.stderr)
        return code


def _exit_code(e: Exception) -> int:
    if isinstance(e, NaNLossError):
        return EXIT_NAN
    if isinstance(e, CheckFailure):
        return EXIT_CHECK
    if isinstance(e, (CheckpointFormatError, DatasetFormatError, OSError)):
        return EXIT_IO
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
