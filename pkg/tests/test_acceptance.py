"""End-to-end acceptance suite.

One test per acceptance criterion; each prints a single PASS line with the
measured values (run with ``pytest -s`` to see them even on success).
Criteria 7 and 9 use synthetic worlds whose parameters were calibrated
against the exhaustive brute-force oracles before the thresholds were fixed.
"""

import json
import math
import time
from pathlib import Path

import numpy as np

from detailfuse import autograd as ag
from detailfuse.autograd import Tensor
from detailfuse.fusion import FusionConfig, FusionModel, fuse_forward, query_proxy_loss
from detailfuse.geometry import CoverConfig, CoverMode, generate_cc, verify_cover
from detailfuse.resources import measure_query_latency, storage_estimate
from detailfuse.retrieval import (ClassQuery, ImageRecord, QuerySet, SourceTag, evaluate,
                                  recall_at_k, score_images)
from detailfuse.runner import run
from detailfuse.world import ScaleRegime, WorldConfig, build_world

from test_autograd import numeric_grad
from test_fusion import reference_query_proxy_loss


def _report(num: int, name: str, detail: str):
    print(f"[criterion {num:2d}] PASS {name}: {detail}")


# 1 ─ table-mode patch counts ------------------------------------------------

EXPECTED_TOTALS = {1: 1, 2: 5, 3: 14, 4: 30, 5: 39, 6: 66, 7: 79, 8: 103,
                   9: 136, 10: 166, 11: 187, 12: 248, 13: 273, 14: 315, 15: 355}


def test_01_patch_count_fidelity():
    for k, want in EXPECTED_TOTALS.items():
        cover = generate_cc(CoverConfig(224, k, CoverMode.TABLE_COMPAT))
        assert len(cover.patches) == want, f"k={k}: {len(cover.patches)} != {want}"
    cover10 = generate_cc(CoverConfig(224, 10, CoverMode.TABLE_COMPAT))
    assert cover10.per_level_counts == [1, 4, 9, 16, 36, 100]
    _report(1, "patch-count fidelity",
            f"k=1..15 counts exact, k=10 levels {cover10.per_level_counts}")


# 2 ─ provable-mode completeness ---------------------------------------------


def test_02_cover_completeness():
    t0 = time.time()
    checked = 0
    for a in range(8, 129):
        for k in (2, 3, 5):
            cover = generate_cc(CoverConfig(a, k, CoverMode.PROVABLE))
            rep = verify_cover(cover, k, cover.min_object_side, stride=1)
            assert rep.complete, f"a={a} k={k}: {len(rep.uncovered)} uncovered"
            checked += rep.enumerated
    dt = time.time() - t0
    assert dt < 60
    _report(2, "cover completeness",
            f"sides 8..128 x k in (2,3,5), {checked} boxes, 0 uncovered, {dt:.1f}s")


# 3 ─ patch-budget bound -----------------------------------------------------


def test_03_complexity_bound():
    worst = 0.0
    for k in range(2, 16):
        cover = generate_cc(CoverConfig(224, k, CoverMode.PROVABLE))
        bound = math.ceil(k * k * math.pi ** 2 / 6) * 1.05
        assert len(cover.patches) <= bound, f"k={k}: {len(cover.patches)} > {bound}"
        worst = max(worst, len(cover.patches) / bound)
    _report(3, "complexity bound",
            f"k=2..15 within ceil(k^2*pi^2/6)*1.05, worst fill {worst:.3f}")


# 4 ─ gradient checks --------------------------------------------------------

GRAD_TOL = 1e-4


def _rel_err(num: np.ndarray, ana: np.ndarray) -> float:
    denom = np.maximum(1e-6, np.maximum(np.abs(num), np.abs(ana)))
    return float((np.abs(num - ana) / denom).max())


def _op_objectives(rng):
    w = Tensor(rng.standard_normal((3, 4)))
    y = Tensor(rng.standard_normal((2, 3, 4)))
    flat_w = Tensor(rng.standard_normal(24))
    return {
        "add": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(ag.add(x, y), y))),
        "sub": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(ag.sub(x, y), y))),
        "mul": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(ag.mul(x, y), y))),
        "scale": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(ag.scale(x, 1.7), y))),
        "matmul": ((2, 5, 3), lambda x: ag.sum_all(ag.mul(ag.matmul(x, w),
                                                          Tensor(np.ones((2, 5, 4)))))),
        "transpose": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(ag.transpose(x, (0, 2, 1)),
                                                             Tensor(np.ones((2, 4, 3)) * 0.3)))),
        "reshape": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(ag.reshape(x, (6, 4)),
                                                           Tensor(np.ones((6, 4)) * 0.5)))),
        "concat": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(ag.concat([x, y], axis=1),
                                                          Tensor(np.ones((2, 6, 4)) * 0.2)))),
        "relu": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(ag.relu(x), y))),
        "softmax": ((3, 6), lambda x, w=Tensor(rng.standard_normal((3, 6))):
                    ag.sum_all(ag.mul(ag.softmax(x, axis=-1), w))),
        "layer_norm": ((3, 6), lambda x, w=Tensor(rng.standard_normal((3, 6))):
                       ag.sum_all(ag.mul(ag.layer_norm(x, 1e-5), w))),
        "max_along": ((3, 6), lambda x, w=Tensor(rng.standard_normal(3)):
                      ag.sum_all(ag.mul(ag.max_along(x, axis=-1), w))),
        "l2_normalize": ((3, 6), lambda x, w=Tensor(rng.standard_normal((3, 6))):
                         ag.sum_all(ag.mul(ag.l2_normalize(x), w))),
        "sum_all": ((2, 3, 4), lambda x: ag.sum_all(ag.mul(x, y))),
        "mse": ((3, 4), lambda x, w=Tensor(rng.standard_normal((3, 4))): ag.mse(x, w)),
        "scaled_dot_attention": (
            (2, 5, 4),
            lambda x,
            k=Tensor(rng.standard_normal((2, 5, 4))),
            v=Tensor(rng.standard_normal((2, 5, 4))),
            w=Tensor(rng.standard_normal((2, 5, 4))):
            ag.sum_all(ag.mul(ag.scaled_dot_attention(x, k, v), w))),
        "flat": (24, lambda x: ag.sum_all(ag.mul(x, flat_w))),
    }


def _check_build(build, x0):
    t = Tensor(x0.copy(), requires_grad=True)
    build(t).backward()
    num = numeric_grad(lambda x: float(build(Tensor(x)).data), x0.copy())
    return _rel_err(num, t.grad)


def test_04_gradcheck():
    worst = 0.0
    num_ops = 0
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        objectives = _op_objectives(rng)
        num_ops = len(objectives) - 1  # "flat" is a plumbing case, not an op
        for name, (shape, build) in objectives.items():
            err = _check_build(build, rng.standard_normal(shape))
            assert err < GRAD_TOL, f"op {name} seed {seed}: rel err {err:.2e}"
            worst = max(worst, err)

    # full model composition: loss gradient wrt >= 50 sampled parameter entries
    cfg = FusionConfig(dim=8, enc_layers=1, dec_layers=1, heads=2, ff_dim=16)
    samples = 0
    for seed in (0, 1, 2):
        rng = np.random.default_rng(100 + seed)
        model = FusionModel.create(cfg, seed=seed)

        def norm_rows(x):
            return x / np.linalg.norm(x, axis=-1, keepdims=True)

        U = Tensor(norm_rows(rng.standard_normal((2, 3, 8))))
        full = Tensor(norm_rows(rng.standard_normal((2, 8))))
        texts = Tensor(norm_rows(rng.standard_normal((4, 8))))

        def loss_value() -> float:
            fused = fuse_forward(model.params, cfg, U, full)
            return float(query_proxy_loss(fused, U, texts).data)

        model.params.zero_grad()
        fused = fuse_forward(model.params, cfg, U, full)
        query_proxy_loss(fused, U, texts).backward()

        names = sorted(model.params)
        for _ in range(20):
            pname = names[rng.integers(len(names))]
            tensor = model.params[pname]
            idx = tuple(rng.integers(s) for s in tensor.data.shape)
            orig = tensor.data[idx]
            h = 1e-5
            tensor.data[idx] = orig + h
            hi = loss_value()
            tensor.data[idx] = orig - h
            lo = loss_value()
            tensor.data[idx] = orig
            num = (hi - lo) / (2 * h)
            err = _rel_err(np.array(num), np.array(tensor.grad[idx]))
            assert err < GRAD_TOL, f"{pname}{idx} seed {seed}: rel err {err:.2e}"
            worst = max(worst, err)
            samples += 1
    assert samples >= 50
    _report(4, "gradcheck",
            f"{num_ops} ops x 3 seeds + {samples} model params, worst rel err {worst:.1e}")


# 5 ─ loss semantics ----------------------------------------------------------


def test_05_loss_semantics():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)

        def unit(*shape):
            x = rng.standard_normal(shape)
            return x / np.linalg.norm(x, axis=-1, keepdims=True)

        fused, patches, texts = unit(4, 16), unit(4, 7, 16), unit(5, 16)
        got = float(query_proxy_loss(Tensor(fused), Tensor(patches), Tensor(texts)).data)
        want = reference_query_proxy_loss(fused, patches, texts)
        worst = max(worst, abs(got - want))
        assert abs(got - want) <= 1e-10, f"seed {seed}: |{got} - {want}|"
    _report(5, "loss semantics", f"20 seeds vs straight-line reimplementation, "
                                 f"worst gap {worst:.1e} <= 1e-10")


# 6 ─ recall metric -----------------------------------------------------------

# (ranked ids best-first, relevant set, k, expected recall computed by hand;
# the retrieval window is min(len(ranked), n*k) for n relevant images)
RANKED_CASES = [
    ([1, 2, 3, 4], {1}, 1, 1.0),
    ([1, 2, 3, 4], {2}, 1, 0.0),
    ([1, 2, 3, 4], {4}, 3, 0.0),
    ([1, 2, 3, 4], {4}, 5, 1.0),          # window capped at 4 ranked images
    ([1, 2, 3, 4], {3, 4}, 1, 0.0),
    ([1, 2, 3, 4], {1, 2}, 1, 1.0),
    ([1, 2, 3, 4, 5, 6], {2, 5}, 1, 0.5),
    ([1, 2, 3, 4, 5, 6], {2, 5}, 3, 1.0),
    ([5, 4, 3, 2, 1], {1, 2}, 1, 0.0),
    ([5, 4, 3, 2, 1], {4, 5}, 1, 1.0),
    ([1, 2, 3], {1, 2, 3}, 1, 1.0),
    ([3, 2, 1], {1}, 1, 0.0),
    ([3, 2, 1], {1}, 3, 1.0),
    ([10, 20, 30, 40, 50, 60, 70, 80], {20, 40, 60}, 1, 1 / 3),
    ([10, 20, 30, 40, 50, 60, 70, 80], {20, 40, 60}, 3, 1.0),
    ([10, 20, 30, 40, 50, 60, 70, 80], {70, 80}, 3, 0.0),
    ([10, 20, 30, 40, 50, 60, 70, 80], {70, 80}, 5, 1.0),
    ([1], {1}, 5, 1.0),
    ([2], {1}, 5, 0.0),                    # relevant image absent from ranking
    ([9, 8, 7, 6, 5, 4, 3, 2, 1, 0], {0, 4, 9}, 1, 1 / 3),
]

# (image id -> unit feature angle cosine, relevant, k, expected); query [1, 0].
# Ties are broken by ascending image id.
SCORED_CASES = [
    ({1: 0.9, 2: 0.8, 3: 0.7}, {1}, 1, 1.0),
    ({1: 0.7, 2: 0.8, 3: 0.9}, {1}, 1, 0.0),
    ({1: 0.5, 2: 0.5, 3: 0.9}, {1}, 2, 1.0),   # tie 1-2, id 1 ranks first
    ({1: 0.5, 2: 0.5, 3: 0.9}, {2}, 2, 0.0),   # tie loser pushed out of window
    ({4: 0.5, 2: 0.5, 3: 0.9}, {2}, 2, 1.0),
    ({1: 0.5, 2: 0.5, 3: 0.5, 4: 0.5}, {3, 4}, 1, 0.0),
    ({1: 0.5, 2: 0.5, 3: 0.5, 4: 0.5}, {1, 2}, 1, 1.0),
    ({1: 0.1, 2: 0.2, 3: 0.3, 4: 0.4, 5: 0.5}, {1, 5}, 2, 0.5),
    ({1: 0.1, 2: 0.2, 3: 0.3, 4: 0.4, 5: 0.5}, {1, 5}, 3, 1.0),
    ({7: 0.9}, {7}, 1, 1.0),
]


def _unit2(c: float) -> np.ndarray:
    return np.array([c, math.sqrt(1.0 - c * c)])


def test_06_recall_metric():
    cases = 0
    for ranked, relevant, k, want in RANKED_CASES:
        got = recall_at_k(ranked, relevant, k)
        assert got == want, f"{ranked} rel={relevant} k={k}: {got} != {want}"
        cases += 1
    query = np.array([1.0, 0.0])
    for cosines, relevant, k, want in SCORED_CASES:
        records = [ImageRecord(i, _unit2(c), SourceTag.FULL_IMAGE)
                   for i, c in cosines.items()]
        got = recall_at_k(score_images(query, records), relevant, k)
        assert got == want, f"{cosines} rel={relevant} k={k}: {got} != {want}"
        cases += 1
    assert cases == 30
    _report(6, "recall metric", f"{cases} hand-computed ranking cases exact")


# 7 ─ end-to-end detail injection ---------------------------------------------


def test_07_detail_injection(tmp_path):
    t0 = time.time()
    out = run("detail-injection", tmp_path / "run")
    dt = time.time() - t0
    rows = {r["variant"]: r["macro"]["1"]
            for r in json.load(open(out / "report.json"))["rows"]}
    base, multi, fused = rows["full_image"], rows["cc_multi"], rows["fused_single"]
    gap_baseline = fused - base
    gap_multi = abs(fused - multi)
    assert gap_baseline >= 0.10, f"fused-baseline gap {gap_baseline:.4f} < 0.10"
    assert gap_multi <= 0.03, f"|fused-multi| {gap_multi:.4f} > 0.03"
    assert dt < 600, f"runtime {dt:.0f}s >= 600s"
    _report(7, "detail injection",
            f"R@1 base={base:.4f} multi={multi:.4f} fused={fused:.4f} "
            f"(gap +{gap_baseline * 100:.1f}pt, |fused-multi|={gap_multi * 100:.2f}pt, {dt:.0f}s)")


# 8 ─ resource arithmetic ------------------------------------------------------


def test_08_resource_arithmetic():
    est = storage_estimate(166, 512)
    assert est.multi_bytes_per_image == 339_968
    assert est.single_bytes_per_image == 2_048
    assert est.ratio == 166.0
    lat = measure_query_latency(num_images=500, rows_per_image=166, dim=512,
                                num_queries=16, repeats=3, seed=0)
    assert lat.single_query_s < lat.multi_query_s
    _report(8, "resource arithmetic",
            f"339968 vs 2048 bytes (ratio 166.0); query latency single "
            f"{lat.single_query_s * 1e3:.2f}ms < multi {lat.multi_query_s * 1e3:.2f}ms")


# 9 ─ scale sensitivity of whole-image features --------------------------------


def test_09_rmax_monotonicity():
    cfg = WorldConfig(num_images=400, num_classes=10, dim=64, image_side=224,
                      regime=ScaleRegime.MIX, min_instances=1, max_instances=1,
                      noise_sigma=0.01, seed=0)
    world = build_world(cfg)
    ids = list(range(cfg.num_images))
    texts = np.stack([world.embed_text(c) for c in range(cfg.num_classes)])
    full = {i: world.embed_image(i) for i in ids}
    recalls = []
    for rmax in (1.0, 10 ** -0.5, 10 ** -1):
        keep = [i for i in ids if world.max_object_fraction(i) <= rmax]
        assert keep, f"rmax={rmax} bucket is empty"
        records = [ImageRecord(i, full[i], SourceTag.FULL_IMAGE) for i in keep]
        queries = QuerySet([
            ClassQuery(c, world.class_names[c], texts[c],
                       {i for i in keep if c in world.classes_in(i)})
            for c in range(cfg.num_classes)])
        recalls.append(evaluate(records, queries, ks=(1,), histogram=None).macro[1])
    assert recalls[0] >= recalls[1] >= recalls[2], f"not monotone: {recalls}"
    _report(9, "rmax monotonicity",
            "whole-image R@1 " + " >= ".join(f"{r:.4f}" for r in recalls)
            + " across rmax buckets 1, 10^-0.5, 10^-1")


# 10 ─ determinism --------------------------------------------------------------

_MINI_RUN = {
    "name": "mini", "seed": 3,
    "world": {"num_images": 40, "num_classes": 6, "dim": 32, "image_side": 64,
              "regime": "small", "instances": [1, 2]},
    "cover": {"k": 2, "mode": "provable"},
    "train": {"epochs": 1, "batch_size": 8},
    "eval": {"ks": [1, 3]},
}


def test_10_run_determinism(tmp_path):
    a = run(dict(_MINI_RUN), tmp_path / "a")
    b = run(dict(_MINI_RUN), tmp_path / "b")
    files = sorted(p.name for p in Path(a).iterdir())
    assert files == sorted(p.name for p in Path(b).iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), f"{name} differs"
    _report(10, "determinism",
            f"{len(files)} artifacts byte-identical across repeated runs "
            "(reports, banks, checkpoint, figures)")
