"""Attention-pair accounting and wall-clock comparison of coupled vs decoupled aggregation."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import numerics as nx
from .attention import SAttStack, aggregate, coupled_forward, sd_forward, td_forward
from .numerics import ParamFactory, Tensor


class PairCountMismatch(AssertionError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    n: int = 15
    T: int = 1
    K: int = 5
    D: int = 32
    layers: int = 4
    heads: int = 2

    @property
    def groups(self) -> tuple:
        return even_groups(self.n, self.K)


def even_groups(n: int, K: int) -> tuple:
    """Contiguous partition of range(n) into K groups whose sizes differ by at most one."""
    if not 1 <= K <= n:
        raise ValueError(f"cannot split {n} joints into {K} groups")
    return tuple(tuple(int(j) for j in part) for part in np.array_split(np.arange(n), K))


def coupled_pairs(n: int, T: int) -> int:
    """Token pairs scored per layer per head when all n(2T+1) tokens attend jointly."""
    return (n * (2 * T + 1)) ** 2


def decoupled_pairs(n: int, T: int, groups) -> int:
    """n temporal sequences of 2T+1 tokens plus one key-frame sequence per group."""
    return n * (2 * T + 1) ** 2 + sum(len(g) ** 2 for g in groups)


def asymptotic_ratio(K: int) -> int:
    """9n^2 / (n^2/K): the ratio that drops the linear 9n term."""
    return 9 * K


@dataclass
class PairCountReport:
    config: dict
    measured: dict            # path -> pairs per layer per head, from the counters
    closed_form: dict
    exact_ratio: float
    asymptotic_ratio: int
    time_ms: dict = field(default_factory=dict)   # path -> median ms per forward
    runs: int = 0
    batch: int = 1

    @property
    def speedup(self) -> float:
        return self.time_ms["coupled"] / self.time_ms["decoupled"]

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.time_ms:
            d["speedup"] = self.speedup
        return d


class _Paths:
    """Random-token inputs and separately parameterised stacks for both aggregation paths."""

    def __init__(self, cfg: BenchConfig, batch: int, seed: int = 0):
        pf = ParamFactory(seed)
        D, F = cfg.D, 2 * cfg.T + 1
        self.cfg, self.F = cfg, F
        self.td = SAttStack(D, pf, "td.", cfg.layers, cfg.heads)
        self.sd = SAttStack(D, pf, "sd.", cfg.layers, cfg.heads)
        self.coupled = SAttStack(D, pf, "coupled.", cfg.layers, cfg.heads)
        rng = np.random.default_rng(seed)
        self.tokens = Tensor(rng.normal(size=(batch, F, cfg.n, D)).astype(np.float32))
        self.tpos = Tensor(rng.normal(0, 0.1, (F, D)).astype(np.float32))
        self.spos = Tensor(rng.normal(0, 0.1, (cfg.n, D)).astype(np.float32))

    def decoupled(self):
        key = self.tokens[:, self.cfg.T]
        return aggregate(td_forward(self.tokens, self.td, self.tpos, self.cfg.T),
                         sd_forward(key, self.sd, self.spos, self.cfg.groups))

    def coupled_path(self):
        return coupled_forward(self.tokens, self.coupled, self.tpos, self.spos, self.cfg.T)

    def reset(self):
        for s in (self.td, self.sd, self.coupled):
            s.reset_counter()


def _median_ms(fn, runs: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times) * 1e3)


def bench_one(cfg: BenchConfig, runs: int = 100, warmup: int = 10, batch: int = 16,
              timing: bool = True) -> PairCountReport:
    paths = _Paths(cfg, batch)
    per = cfg.layers * cfg.heads * batch
    with nx.no_grad():
        paths.reset()
        paths.decoupled()
        dec = (paths.td.pair_count + paths.sd.pair_count) // per
        paths.coupled_path()
        cou = paths.coupled.pair_count // per
    closed = {"coupled": coupled_pairs(cfg.n, cfg.T), "decoupled": decoupled_pairs(cfg.n, cfg.T, cfg.groups)}
    measured = {"coupled": cou, "decoupled": dec}
    if measured != closed:
        raise PairCountMismatch(f"{cfg}: measured {measured} != closed form {closed}")
    report = PairCountReport(asdict(cfg), measured, closed, closed["coupled"] / closed["decoupled"],
                             asymptotic_ratio(cfg.K), runs=runs if timing else 0, batch=batch)
    if timing:
        with threadpool_limits(limits=1), nx.no_grad():
            report.time_ms = {"decoupled": _median_ms(paths.decoupled, runs, warmup),
                              "coupled": _median_ms(paths.coupled_path, runs, warmup)}
    return report


DEFAULT_CONFIGS = (BenchConfig(15, 1, 5), BenchConfig(15, 0, 5), BenchConfig(60, 4, 5))


def pair_count_bench(configs=DEFAULT_CONFIGS, runs: int = 100, warmup: int = 10, batch: int = 16,
                     timing: bool = True) -> list[PairCountReport]:
    return [bench_one(c, runs, warmup, batch, timing) for c in configs]


def reports_json(reports: list[PairCountReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)
