"""End-to-end acceptance gate; prints one PASS/FAIL line per criterion in the terminal summary.

Trains about two dozen desk-scale models, so the whole module takes roughly half an hour on one core.
"""
import time

import numpy as np
import pytest

from dsta.ablation import run_ablation
from dsta.attention import SAttStack, sd_forward, td_forward
from dsta.bench import BenchConfig, bench_one
from dsta.cli import main
from dsta.config import RunConfig
from dsta.dataset import Dataset, generate_dataset, read_dataset, write_dataset
from dsta.evaluation import pck_eval
from dsta.model import DstaModel, ModelConfig, dsta_forward
from dsta.numerics import ParamFactory, Tensor, no_grad
from dsta.synth import SkeletonSpec, generate_samples
from dsta.train import TrainConfig, load_checkpoint, save_checkpoint, train

pytestmark = pytest.mark.slow

TRIALS = 100
SEEDS = (0, 1, 2)


# -- 1: gradients ----------------------------------------------------------------------
def test_c1_gradient_correctness(record, capsys):
    t0 = time.perf_counter()
    ops = main(["gradcheck", "--scope", "ops"])
    model = main(["gradcheck", "--scope", "model", "--jfd", "fc", "conv"])
    secs = time.perf_counter() - t0
    out = capsys.readouterr().out
    errs = [float(line.split("rel err")[1].split()[0]) for line in out.splitlines() if "rel err" in line]
    ok = record(1, ops == 0 and model == 0 and secs < 300,
                f"{len(errs)} checks, worst rel err {max(errs):.1e}, {secs:.0f} s")
    assert ok, out


# -- 2: locality ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def stacks():
    pf = ParamFactory(0)
    return SAttStack(32, pf, "td."), SAttStack(32, pf, "sd."), pf.normal("tpos", (3, 32), 0.1), \
        pf.normal("spos", (15, 32), 0.1)


def test_c2_td_locality(record, stacks):
    td, _, tpos, _ = stacks
    fails = 0
    with no_grad():
        for trial in range(TRIALS):
            rng = np.random.default_rng(trial)
            x = rng.normal(size=(2, 3, 15, 32)).astype(np.float32)
            j = int(rng.integers(15))
            y = x.copy()
            others = np.arange(15) != j
            y[:, :, others] += rng.normal(size=y[:, :, others].shape).astype(np.float32)
            a = td_forward(Tensor(x), td, tpos, 1).data[:, j]
            b = td_forward(Tensor(y), td, tpos, 1).data[:, j]
            fails += a.tobytes() != b.tobytes()
    record(2, fails == 0, f"TD {fails}/{TRIALS} failures")
    assert fails == 0


def test_c2_sd_locality(record, stacks):
    _, sd, _, spos = stacks
    groups = ModelConfig().groups
    fails = 0
    with no_grad():
        for trial in range(TRIALS):
            rng = np.random.default_rng(1000 + trial)
            clip = rng.normal(size=(2, 3, 15, 32)).astype(np.float32)
            g = list(groups[int(rng.integers(len(groups)))])
            pert = clip.copy()
            pert[:, [0, 2]] += rng.normal(size=pert[:, [0, 2]].shape).astype(np.float32)  # auxiliary frames
            outside = np.setdiff1d(np.arange(15), g)
            pert[:, 1, outside] += rng.normal(size=(2, len(outside), 32)).astype(np.float32)
            a = sd_forward(Tensor(clip[:, 1]), sd, spos, groups).data[:, g]
            b = sd_forward(Tensor(pert[:, 1]), sd, spos, groups).data[:, g]
            fails += a.tobytes() != b.tobytes()
    record(2, fails == 0, f"SD {fails}/{TRIALS} failures")
    assert fails == 0


@pytest.mark.parametrize("mode", ["sd_only", "single_frame"])
def test_c2_end_to_end_ignores_aux_frames(record, mode):
    cfg = ModelConfig(mode=mode)
    model = DstaModel(cfg)
    fails = 0
    with no_grad():
        for trial in range(TRIALS):
            rng = np.random.default_rng(2000 + trial)
            obs = rng.random((1, 3, cfg.H, cfg.W)).astype(np.float32)
            pert = obs.copy()
            pert[:, [0, 2]] = rng.random((1, 2, cfg.H, cfg.W)).astype(np.float32)
            a, b = dsta_forward(obs, model), dsta_forward(pert, model)
            fails += (a.coords.data.tobytes() != b.coords.data.tobytes()
                      or a.log_scale.data.tobytes() != b.log_scale.data.tobytes())
    record(2, fails == 0, f"{mode} {fails}/{TRIALS} failures")
    assert fails == 0


# -- 3: complexity ------------------------------------------------------------------------------
def test_c3_pair_counts_and_wall_clock(record):
    small = bench_one(BenchConfig(15, 1, 5), runs=100, warmup=10)
    single = bench_one(BenchConfig(15, 0, 5), timing=False)
    large = bench_one(BenchConfig(60, 4, 5), runs=100, warmup=10)
    counts = (small.measured == {"coupled": 2025, "decoupled": 180} and small.exact_ratio == 11.25
              and single.measured == {"coupled": 225, "decoupled": 60}
              and large.measured == {"coupled": 291600, "decoupled": 5580})
    faster = small.time_ms["decoupled"] < small.time_ms["coupled"]
    speedup = large.speedup >= 5
    detail = (f"counts {'exact' if counts else 'MISMATCH'}, ratio 11.25 (asymptotic 9K={small.asymptotic_ratio}); "
              f"n=15,T=1: decoupled {small.time_ms['decoupled']:.2f} ms vs coupled "
              f"{small.time_ms['coupled']:.2f} ms ({'faster' if faster else 'SLOWER'}); "
              f"n=60,T=4: x{large.speedup:.1f} (batch {small.batch})")
    record(3, counts and faster and speedup, detail)
    assert counts
    assert speedup, detail
    assert faster, detail


# -- 4 to 7: training ablations ---------------------------------------------------------------
@pytest.fixture(scope="module")
def ablation_setup():
    cfg = RunConfig()
    d = cfg.data
    common = dict(seed=cfg.seed, T=2, H=d.H, W=d.W, corruption=cfg.corruption_config(),
                  dynamics=cfg.dynamics(), augment=cfg.augmentation())
    train_data = generate_dataset(d.train_count, "train", **common)
    evals = {s: generate_dataset(d.val_count, s, **common) for s in ("val", "val-occluded")}
    return cfg.model_config(), train_data, evals, cfg.train_config(), {}


def _ablate(setup, suite, labels):
    base, train_data, evals, tcfg, cache = setup
    return run_ablation(suite, base, train_data, evals, tcfg, SEEDS, cache=cache, labels=labels)


def _fmt(rep, label, split):
    return f"{label} {100 * rep.median(label, split):.1f}"


def test_c4_temporal_cue_benefit(record, ablation_setup):
    rep = _ablate(ablation_setup, "modules", ["single_frame", "full"])
    full, single = rep.median("full", "val-occluded"), rep.median("single_frame", "val-occluded")
    pair_secs = sum(c.seconds for c in rep.cells if c.seed == 0)
    gap = 100 * (full - single)
    ok = record(4, gap >= 2 and pair_secs <= 1200,
                f"val-occluded PCK@0.2 median {_fmt(rep, 'full', 'val-occluded')} vs "
                f"{_fmt(rep, 'single_frame', 'val-occluded')} (gap {gap:.1f} points); pair of runs {pair_secs:.0f} s")
    assert ok, rep.to_markdown()


def test_c5_module_ablation_direction(record, ablation_setup):
    rep = _ablate(ablation_setup, "modules", None)
    m = {label: rep.median(label, "val-occluded") for label in rep.labels}
    ok = record(5, m["full"] > m["coupled"] and m["td_only"] > m["sd_only"],
                "val-occluded " + ", ".join(_fmt(rep, label, "val-occluded") for label in rep.labels))
    assert ok, rep.to_markdown()


def test_c6_aux_frame_monotonicity(record, ablation_setup):
    labels = ["1 aux {-1}", "2 aux {-1,+1}", "4 aux {-2..+2}"]
    rep = _ablate(ablation_setup, "aux_frames", labels)
    one, two, four = (rep.median(label, "val") for label in labels)
    ok = record(6, four >= two >= one, "val " + ", ".join(_fmt(rep, label, "val") for label in labels))
    assert ok, rep.to_markdown()


def test_c7_token_size_direction(record, ablation_setup):
    rep = _ablate(ablation_setup, "token_size", ["D=8", "D=32"])
    ok = record(7, rep.median("D=8", "val") < rep.median("D=32", "val"),
                "val " + ", ".join(_fmt(rep, label, "val") for label in ("D=8", "D=32")))
    assert ok, rep.to_markdown()


# -- 8: overfit --------------------------------------------------------------------------------
def test_c8_overfit_and_bit_identical_runs(record, tmp_path):
    clips = Dataset.from_samples(generate_samples(8, "train", seed=0, T=1))
    tcfg = TrainConfig(epochs=500, batch_size=8)  # 8 clips per batch: one step per epoch
    paths, pck, loss = [], None, None
    for run in range(2):
        model = DstaModel(ModelConfig())
        _, logs = train(model, clips, tcfg)
        paths.append(tmp_path / f"run{run}.ckpt")
        save_checkpoint(model, paths[-1])
        pck, loss = pck_eval(model, clips).mean[0.05], logs[-1].train_loss
    same = paths[0].read_bytes() == paths[1].read_bytes()
    ok = record(8, pck == 1.0 and same,
                f"PCK@0.05 {100 * pck:.1f}% after 500 steps, final loss {loss:.2f}, "
                f"checkpoints {'bit-identical' if same else 'DIFFER'}")
    assert ok


# -- 9: persistence ---------------------------------------------------------------------------
def test_c9_persistence(record, tmp_path, capsys):
    data = generate_dataset(20, "val-occluded", seed=5, T=1)
    write_dataset(data, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    data_ok = all(getattr(data, f).tobytes() == getattr(back, f).tobytes()
                  for f in ("observations", "gt", "visibility", "seeds"))

    model = DstaModel(ModelConfig(seed=3))
    save_checkpoint(model, tmp_path / "a.ckpt")
    loaded = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(loaded, tmp_path / "b.ckpt")
    params_ok = all(p.data.tobytes() == loaded.parameters()[k].data.tobytes()
                    for k, p in model.parameters().items())
    ckpt_ok = params_ok and (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    spec = SkeletonSpec(("a", "b", "c", "d"), (-1, 0, 1, 2), (0, 1, 1, 1), (0, 0, 0, 0), (0.1,) * 4,
                        ((0, 1), (2, 3)))
    write_dataset(generate_dataset(3, "val", seed=0, T=1, spec=spec), tmp_path / "n4")
    write_dataset(generate_dataset(3, "val", seed=0, T=1, H=32, W=32), tmp_path / "small")
    codes = [main(["eval", "--checkpoint", str(tmp_path / "a.ckpt"), "--data", str(tmp_path / d)])
             for d in ("n4", "small")]
    err = capsys.readouterr().err
    cross_ok = codes == [2, 2] and "field: n" in err and "field: H" in err
    ok = record(9, data_ok and ckpt_ok and cross_ok,
                f"dataset round trip {'bit-exact' if data_ok else 'DIFFERS'}, checkpoint round trip "
                f"{'bit-exact' if ckpt_ok else 'DIFFERS'}, cross-config exit codes {codes}")
    assert ok, err
