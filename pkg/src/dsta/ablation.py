"""Ablation suites: train each configuration per seed on shared data and tabulate PCK."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .evaluation import THRESHOLDS, pck_eval
from .model import DstaModel, ModelConfig
from .train import TrainConfig, train

log = logging.getLogger(__name__)

SUITES = ("modules", "aux_frames", "token_size", "jfd_choice")


def suite_configs(suite: str, base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """(label, config) cells of one suite, derived from ``base``."""
    if suite == "modules":
        return [(m, replace(base, mode=m)) for m in ("single_frame", "coupled", "sd_only", "td_only", "full")]
    if suite == "aux_frames":
        spans = [("0 aux {0}", (0,)), ("1 aux {-1}", (-1, 0)), ("2 aux {-1,+1}", (-1, 0, 1)),
                 ("4 aux {-2..+2}", (-2, -1, 0, 1, 2))]
        return [(label, replace(base, mode="full", frame_offsets=o)) for label, o in spans]
    if suite == "token_size":
        return [(f"D={d}", replace(base, D=d)) for d in (8, 16, 32, 64)]
    if suite == "jfd_choice":
        return [(j, replace(base, jfd_mode=j)) for j in ("coord_embed", "fc")]
    raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")


def required_span(suite: str, base: ModelConfig) -> int:
    return max(cfg.T for _, cfg in suite_configs(suite, base))


@dataclass
class CellResult:
    label: str
    seed: int
    config: dict
    pck: dict            # split -> {alpha: value}
    final_loss: float
    seconds: float = 0.0  # train + evaluate wall-clock


def _cell_key(cfg: ModelConfig, tcfg: TrainConfig) -> str:
    return json.dumps({"model": cfg.to_dict(), "train": vars(tcfg)}, sort_keys=True, default=list)


def run_cell(label: str, cfg: ModelConfig, tcfg: TrainConfig, train_data: Dataset,
             eval_sets: dict, thresholds=THRESHOLDS) -> CellResult:
    model = DstaModel(cfg)
    t0 = time.perf_counter()
    _, logs = train(model, train_data, tcfg)
    pck = {name: pck_eval(model, d, thresholds).mean for name, d in eval_sets.items()}
    seconds = time.perf_counter() - t0
    log.info("%s seed %d: %s", label, cfg.seed, {k: round(v[max(thresholds)], 4) for k, v in pck.items()})
    return CellResult(label, cfg.seed, cfg.to_dict(), pck, logs[-1].train_loss, seconds)


def _run_cell_args(args):
    return run_cell(*args)


@dataclass
class AblationReport:
    suite: str
    cells: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def values(self, label: str, split: str, alpha: float = 0.2) -> list[float]:
        return [c.pck[split][alpha] for c in self.cells if c.label == label]

    def median(self, label: str, split: str, alpha: float = 0.2) -> float:
        return float(np.median(self.values(label, split, alpha)))

    def rows(self) -> list[dict]:
        """Long format: one row per (config, seed, split, metric)."""
        out = []
        for c in self.cells:
            for split, res in c.pck.items():
                for alpha, v in res.items():
                    out.append({"suite": self.suite, "config": c.label, "seed": c.seed, "split": split,
                                "metric": f"pck@{alpha}", "value": v})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["suite", "config", "seed", "split", "metric", "value"], lineterminator="\n")
        w.writeheader()
        for r in self.rows():
            w.writerow({**r, "value": f"{r['value']:.6f}"})
        return buf.getvalue()

    def to_markdown(self, alpha: float = 0.2) -> str:
        splits = list(self.cells[0].pck) if self.cells else []
        head = ["config", "seeds"] + [f"{s} PCK@{alpha} median [min, max]" for s in splits]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for label in self.labels:
            cells = [label, str(len(self.values(label, splits[0], alpha)))]
            for s in splits:
                v = self.values(label, s, alpha)
                cells.append(f"{100 * np.median(v):.1f} [{100 * min(v):.1f}, {100 * max(v):.1f}]")
            lines.append("| " + " | ".join(cells) + " |")
        return f"### {self.suite}\n\n" + "\n".join(lines) + "\n"


def run_ablation(suite: str, base: ModelConfig, train_data: Dataset, eval_sets: dict,
                 tcfg: TrainConfig | None = None, seeds=(0, 1, 2), workers: int = 1,
                 cache: dict | None = None, labels=None) -> AblationReport:
    """Train and evaluate every (configuration, seed) cell of ``suite``.

    All cells share ``train_data`` and ``eval_sets`` (split name -> Dataset).
    ``cache`` maps a cell key to a finished :class:`CellResult` so suites that
    share a configuration (for example the full model) train it once.
    """
    tcfg = tcfg or TrainConfig()
    if len(seeds) < 1:
        raise ValueError("run_ablation needs at least one seed")
    cells = suite_configs(suite, base)
    if labels is not None:
        unknown = set(labels) - {label for label, _ in cells}
        if unknown:
            raise ValueError(f"suite {suite} has no configurations {sorted(unknown)}")
        cells = [(label, cfg) for label, cfg in cells if label in labels]
    need = max(cfg.T for _, cfg in cells)
    for name, d in [("train", train_data), *eval_sets.items()]:
        if d.T < need:
            raise ValueError(f"suite {suite} needs clips with T >= {need}; {name} data has T={d.T}")
    cache = {} if cache is None else cache
    todo, keys = [], []
    for label, cfg in cells:
        for s in seeds:
            c, t = replace(cfg, seed=s), replace(tcfg, seed=s)
            key = _cell_key(c, t)
            keys.append((label, key))
            if key not in cache:
                todo.append((key, (label, c, t, train_data, eval_sets)))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers) as pool:
            done = pool.map(_run_cell_args, [a for _, a in todo])
            for (key, _), res in zip(todo, done):
                cache[key] = res
    else:
        for key, args in todo:
            cache[key] = run_cell(*args)
    report = AblationReport(suite, labels=[label for label, _ in cells])
    for label, key in keys:
        res = cache[key]
        report.cells.append(CellResult(label, res.seed, res.config, res.pck, res.final_loss, res.seconds))
    return report
