import math
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np
import pytest

from freedim.errors import InvalidParameter, ShapeError
from freedim.kernel import (build_band, build_constant, build_diagonal_triangles,
                            build_lifted, build_upper_triangle, l1_mass)
from freedim.randmat import (SampleConfig, cell_targets, d_microstate, dt_sample,
                             expected_trace, ginibre, hs_norm, kernel_recovery,
                             lifted_sample, perturbed_dt, variance_mask, weighted_sample)
from freedim.spectra import eigenvalues


def trace_stats(draw, k, trials, seed=0):
    vals = np.array([np.sum(np.abs(draw(SampleConfig(k, seed, t))) ** 2) / k for t in range(trials)])
    return vals.mean(), vals.std(ddof=1) / math.sqrt(trials)


def test_sample_config_validation():
    with pytest.raises(InvalidParameter):
        SampleConfig(0)
    with pytest.raises(InvalidParameter):
        SampleConfig(4, seed=-1)
    with pytest.raises(InvalidParameter):
        SampleConfig(4, trial_index=-1)


def test_ginibre_deterministic():
    a = ginibre(SampleConfig(16, 5, 3))
    b = ginibre(SampleConfig(16, 5, 3))
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != ginibre(SampleConfig(16, 5, 4)).tobytes()
    assert a.tobytes() != ginibre(SampleConfig(16, 6, 3)).tobytes()


def test_ginibre_deterministic_across_threads():
    cfgs = [SampleConfig(32, 1, t) for t in range(16)]
    serial = [ginibre(c).tobytes() for c in cfgs]
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = [x.tobytes() for x in pool.map(ginibre, reversed(cfgs))][::-1]
    assert serial == threaded


def test_ginibre_k1_variance():
    z = np.array([ginibre(SampleConfig(1, 0, t))[0, 0] for t in range(4000)])
    assert abs(np.mean(np.abs(z) ** 2) - 1) < 4 * np.std(np.abs(z) ** 2) / math.sqrt(len(z))
    assert abs(np.var(z.real) - 0.5) < 0.05 and abs(np.var(z.imag) - 0.5) < 0.05


def test_ginibre_trace():
    mean, se = trace_stats(ginibre, 64, 200)
    assert abs(mean - 1) <= 3 * se


def test_dt_sample_structure_and_trace():
    X = dt_sample(SampleConfig(12, 0, 0))
    assert np.all(np.tril(X) == 0)
    assert np.all(X[np.triu_indices(12, 1)] != 0)
    assert np.all(eigenvalues(X).eigenvalues == 0)
    mean, se = trace_stats(dt_sample, 64, 200)
    assert abs(mean - 63 / 128) <= 3 * se


def test_dt_recovery_n1():
    k = 64
    H = np.mean([kernel_recovery(dt_sample(SampleConfig(k, 0, t)), 1)[0, 0] for t in range(100)])
    assert H == pytest.approx((k - 1) / (2 * k), rel=0.02)


def test_d_microstate():
    assert np.array_equal(d_microstate(1), np.array([[0.5]]))
    assert np.array_equal(np.diag(d_microstate(2)), [0.25, 0.75])
    for k in (1, 2, 5, 50, 400):
        g = np.diag(d_microstate(k)).real
        assert abs(np.mean(g) - 0.5) < 1e-15
        assert abs(np.mean(g ** 2) - 1 / 3) <= 1 / (4 * k * k) + 1e-15


def test_weighted_sample_matches_special_models_bitwise():
    for t in range(3):
        cfg = SampleConfig(24, 9, t)
        assert np.array_equal(weighted_sample(build_constant(1, 1), cfg), ginibre(cfg))
        for n in (1, 2, 3, 4, 6):
            assert np.array_equal(weighted_sample(build_upper_triangle(n), cfg), dt_sample(cfg))


def test_upper_triangle_mask_equals_dt_pattern():
    k = 24
    expected = np.triu(np.ones((k, k)), 1) / k
    for n in (1, 2, 3, 4, 6, 8, 12, 24):
        assert np.array_equal(variance_mask(build_upper_triangle(n), k), expected)


def test_weighted_sample_rejects_bad_size():
    with pytest.raises(ShapeError):
        weighted_sample(build_upper_triangle(3), SampleConfig(8))


def test_weighted_constant_trace_is_l1_mass():
    K = build_constant(2, 4)
    assert expected_trace(K, 64) == l1_mass(K) == 4
    mean, se = trace_stats(lambda c: weighted_sample(K, c), 64, 100)
    assert abs(mean - 4) <= 4 * se


BUILDERS = [
    build_constant(2, 3),
    build_upper_triangle(4),
    build_diagonal_triangles(2, 2),
    build_band(8, 2, 1),
    build_lifted(2, 2, [[0, 1.5], [0, 0]]),
]


@pytest.mark.parametrize("K", BUILDERS, ids=["constant", "upper", "diag", "band", "lifted"])
@pytest.mark.parametrize("k", [32, 64, 128])
def test_variance_bookkeeping(K, k):
    exact = expected_trace(K, k)
    # closed form: full cells count b^2 entries, half cells b(b-1)/2
    b = k // K.n
    count = sum(v * (b * b if f == 1 else b * (b - 1) // 2) for _, _, f, v in K.cells())
    assert exact == Fraction(count, k * k)
    mean, se = trace_stats(lambda c: weighted_sample(K, c), k, 100, seed=k)
    assert abs(mean - float(exact)) <= 4 * se


def test_cell_targets():
    K = build_upper_triangle(2)
    t = cell_targets(K, 8)
    assert t[0, 0] == Fraction(3, 8) and t[0, 1] == 1 and t[1, 0] == 0
    t = cell_targets(build_constant(2, 3), 8)
    assert all(v == 3 for v in t.flat)


def test_kernel_recovery_examples():
    assert np.all(kernel_recovery(np.zeros((8, 8)), 4) == 0)
    vals = [kernel_recovery(ginibre(SampleConfig(32, 0, t)), 1)[0, 0] for t in range(100)]
    assert abs(np.mean(vals) - 1) <= 4 * np.std(vals, ddof=1) / 10
    K = build_constant(2, 3)
    H = np.stack([kernel_recovery(weighted_sample(K, SampleConfig(32, 0, t)), 2) for t in range(100)])
    se = H.std(axis=0, ddof=1) / 10
    assert np.all(np.abs(H.mean(axis=0) - 3) <= 4 * se)
    with pytest.raises(ShapeError):
        kernel_recovery(np.zeros((8, 8)), 3)


def test_recovery_spread_decreases_with_k():
    K = build_band(4, 2, 1)
    spreads = []
    for k in (32, 64, 128, 256):
        H = np.stack([kernel_recovery(weighted_sample(K, SampleConfig(k, 1, t)), 4) for t in range(60)])
        spreads.append(H.std(axis=0, ddof=1)[0, 1])
    assert all(b < a for a, b in zip(spreads, spreads[1:]))
    # full cell: sd of the mean of b^2 exponentials times n^2/k equals v n / k
    for k, s in zip((32, 64, 128, 256), spreads):
        assert s == pytest.approx(4 / k, rel=0.3)


def test_lifted_degenerate_blocks_identical():
    X = lifted_sample(2, 1, [[0, 0], [0, 0]], SampleConfig(16, 0, 0))
    top, bottom = X[:8, :8], X[8:, 8:]
    assert np.array_equal(top, bottom)
    assert np.all(X[:8, 8:] == 0) and np.all(X[8:, :8] == 0)
    assert np.array_equal(top * math.sqrt(2), dt_sample(SampleConfig(8, 0, 0)))


def test_lifted_independent_diagonal_option():
    X = lifted_sample(2, 1, [[0, 0], [0, 0]], SampleConfig(16, 0, 0), independent_diagonal=True)
    assert not np.array_equal(X[:8, :8], X[8:, 8:])


def test_lifted_recovery_and_trace():
    c = [[0, 1], [0, 0]]
    K = build_lifted(2, 1, c)
    k = 64
    H = np.stack([kernel_recovery(lifted_sample(2, 1, c, SampleConfig(k, 0, t)), 2) for t in range(100)])
    se = H.std(axis=0, ddof=1) / 10
    target = cell_targets(K, k).astype(float)
    np.testing.assert_array_equal(target, [[31 / 64, 1], [0, 31 / 64]])
    ok = np.abs(H.mean(axis=0) - target) <= 4 * se + 1e-15
    assert ok.all()
    mean, se = trace_stats(lambda cfg: lifted_sample(2, 1, c, cfg), k, 100)
    assert abs(mean - float(expected_trace(K, k))) <= 3 * se


def test_lifted_validation():
    with pytest.raises(InvalidParameter):
        lifted_sample(2, 1, [[1, 0], [0, 0]], SampleConfig(8))
    with pytest.raises(ShapeError):
        lifted_sample(2, 2, [[0, 1], [0, 0]], SampleConfig(6))


def test_perturbed_dt_shares_dt_draw():
    cfg = SampleConfig(16, 2, 1)
    z = perturbed_dt(cfg, 0.5)
    y = dt_sample(cfg)
    w = (z - y) / 0.5
    assert np.all(np.abs(w) > 0)
    assert np.allclose(perturbed_dt(cfg, 0.5, 2.0), 2 * z, rtol=0, atol=1e-15)
    with pytest.raises(InvalidParameter):
        perturbed_dt(cfg, 0)
    with pytest.raises(InvalidParameter):
        perturbed_dt(cfg, 0.5, 0)


def test_perturbation_norm():
    eps, k = 0.3, 48
    vals = np.array([hs_norm(perturbed_dt(SampleConfig(k, 0, t), eps) - dt_sample(SampleConfig(k, 0, t))) ** 2
                     for t in range(100)])
    assert abs(vals.mean() - eps ** 2) <= 3 * vals.std(ddof=1) / 10


def test_perturbed_scaling_scales_eigenvalues():
    cfg = SampleConfig(24, 0, 0)
    a = np.sort_complex(eigenvalues(perturbed_dt(cfg, 0.5)).eigenvalues)
    b = np.sort_complex(eigenvalues(perturbed_dt(cfg, 0.5, 2.0)).eigenvalues)
    assert np.allclose(np.sort(np.abs(b)), 2 * np.sort(np.abs(a)), atol=1e-10)


def test_hs_norm_examples():
    assert hs_norm(np.eye(5)) == 1
    assert hs_norm(np.diag([1, 0, 0, 0])) == 0.5
    X = ginibre(SampleConfig(8))
    assert hs_norm((2 - 1j) * X) == pytest.approx(abs(2 - 1j) * hs_norm(X), rel=1e-14)
