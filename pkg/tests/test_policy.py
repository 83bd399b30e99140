import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvgrpo.policy import (
    DimensionMismatch,
    Layout,
    PolicyParams,
    decode,
    dumps_checkpoint,
    encode,
    grad_kl,
    grad_log_prob,
    kl_divergence,
    loads_checkpoint,
    log_prob,
    sample,
)
from mvgrpo.scene import Degradation, EditVector, PerViewDeviation, SharedEdit

SMALL = Layout(m_views=2)


def _params(layout=SMALL, seed=0, spread=1.0):
    r = np.random.default_rng(seed)
    return PolicyParams(r.normal(0, spread, layout.dim), r.uniform(-1.5, 0.5, layout.dim), layout)


def _unit_params(layout=SMALL):
    return PolicyParams(np.zeros(layout.dim), np.zeros(layout.dim), layout)


def _central(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


class TestLayout:
    def test_dimension(self):
        assert Layout(m_views=9).dim == 7 + 9 * 14 == 133

    def test_blocks_partition(self):
        lay = Layout(m_views=3)
        kinds = [lay.block_of(i) for i in range(lay.dim)]
        assert kinds.count("shared") == 7
        assert kinds.count("per_view") == 36
        assert kinds.count("degradation") == 6

    def test_initial_stds(self):
        p = PolicyParams.initial(SMALL)
        np.testing.assert_array_equal(p.mean, 0.0)
        np.testing.assert_allclose(np.exp(p.log_std[: SMALL.deg_offset]), 0.3)
        np.testing.assert_allclose(np.exp(p.log_std[SMALL.deg_offset :]), 0.1)

    def test_zero_is_identity_edit(self):
        e = decode(np.zeros(SMALL.dim), SMALL)
        assert e == EditVector.consistent(SharedEdit(0), 2)


def _edits():
    f = st.floats(-0.5, 0.5, allow_nan=False)
    v3 = st.tuples(f, f, f)
    dev = st.builds(PerViewDeviation, v3, v3, v3, v3)
    deg = st.builds(Degradation, st.floats(0.0, 1.0), st.floats(0.0, 5.0))
    shared = st.builds(SharedEdit, st.just(0), v3, v3, st.floats(0.25, 4.0))
    return st.builds(EditVector, shared, st.tuples(dev, dev), st.tuples(deg, deg))


class TestCodec:
    @given(_edits())
    def test_roundtrip(self, edit):
        back = decode(encode(edit, SMALL), SMALL)
        np.testing.assert_allclose(back.shared.color_delta, edit.shared.color_delta, atol=1e-12)
        np.testing.assert_allclose(back.shared.translation_delta, edit.shared.translation_delta, atol=1e-12)
        assert back.shared.radius_scale == pytest.approx(edit.shared.radius_scale, rel=1e-12)
        for a, b in zip(back.per_view, edit.per_view):
            for name in ("translation_jitter", "color_jitter", "camera_rot_jitter", "camera_trans_jitter"):
                np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-12)
        for a, b in zip(back.degradation, edit.degradation):
            assert a.contrast == pytest.approx(b.contrast, abs=1e-12)
            assert a.blur_sigma == pytest.approx(b.blur_sigma, abs=1e-12)

    def test_clamps_at_decode(self):
        x = np.zeros(SMALL.dim)
        x[6] = 100.0
        g = SMALL.deg_slice(0).start
        x[g] = 5.0
        x[g + 1] = -3.0
        e = decode(x, SMALL)
        assert e.shared.radius_scale == 4.0
        assert e.degradation[0] == Degradation(1.0, 0.0)

    def test_wrong_length(self):
        with pytest.raises(DimensionMismatch):
            decode(np.zeros(5), SMALL)
        with pytest.raises(DimensionMismatch):
            encode(EditVector.consistent(SharedEdit(), 3), SMALL)


class TestParams:
    def test_log_std_clamped(self):
        p = PolicyParams(np.zeros(SMALL.dim), np.r_[np.full(10, -50.0), np.full(SMALL.dim - 10, 50.0)], SMALL)
        assert p.log_std.min() == -6.0 and p.log_std.max() == 2.0

    def test_read_only(self):
        p = PolicyParams.initial(SMALL)
        with pytest.raises(ValueError):
            p.mean[0] = 1.0

    def test_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            PolicyParams(np.zeros(3), np.zeros(3), SMALL)


class TestLogProb:
    def test_standard_normal_at_mode(self):
        p = _unit_params()
        assert log_prob(p, np.zeros(SMALL.dim), 1.0) == pytest.approx(-SMALL.dim * 0.9189385332046727, abs=1e-12)

    def test_per_dimension_constant(self):
        assert -0.5 * math.log(2 * math.pi) == pytest.approx(-0.9189385, abs=1e-7)

    @given(st.integers(0, 10_000))
    def test_mode_is_maximum(self, seed):
        p = _params(seed=seed % 7)
        x = p.mean + np.random.default_rng(seed).normal(0, 0.5, SMALL.dim)
        assert log_prob(p, p.mean, 0.8) >= log_prob(p, x, 0.8)

    def test_integrates_to_one(self):
        # 2-D slice: importance-free Monte Carlo over a box covering +-6 sigma
        p = _params(seed=3)
        std = 0.8 * np.exp(p.log_std)
        r = np.random.default_rng(5)
        n = 400_000
        lo, hi = -6.0, 6.0
        pts = np.tile(p.mean, (n, 1))
        pts[:, :2] += r.uniform(lo, hi, (n, 2)) * std[:2]
        z = (pts[:, :2] - p.mean[:2]) / std[:2]
        dens = np.exp(-0.5 * np.sum(z * z, axis=1) - np.sum(np.log(std[:2])) - math.log(2 * math.pi))
        volume = (hi - lo) ** 2 * std[0] * std[1]
        assert dens.mean() * volume == pytest.approx(1.0, rel=0.01)

    def test_two_dim_marginal_matches_full(self):
        p = _params(seed=4)
        x = p.mean + 0.1
        full = log_prob(p, x, 0.5)
        std = 0.5 * np.exp(p.log_std)
        manual = np.sum(-0.5 * ((x - p.mean) / std) ** 2 - np.log(std) - 0.5 * math.log(2 * math.pi))
        assert full == pytest.approx(manual, abs=1e-10)


class TestSample:
    def test_small_noise_limit(self):
        p = _params(seed=1)
        c = sample(p, 1e-12, np.random.default_rng(0))
        np.testing.assert_allclose(c.x, p.mean, atol=1e-10)

    def test_deterministic_stream(self):
        p = _params(seed=1)
        a = sample(p, 0.8, np.random.default_rng(np.random.SeedSequence([1, 2, 3])))
        b = sample(p, 0.8, np.random.default_rng(np.random.SeedSequence([1, 2, 3])))
        assert a.x.tobytes() == b.x.tobytes() and a.log_prob_old == b.log_prob_old

    def test_recorded_log_prob_exact(self):
        p = _params(seed=2)
        c = sample(p, 0.8, np.random.default_rng(9))
        assert log_prob(p, c.x, 0.8) == c.log_prob_old

    def test_decoded_matches_x(self):
        p = _params(seed=2, spread=0.2)
        c = sample(p, 0.8, np.random.default_rng(9))
        assert c.decoded == decode(c.x, SMALL)

    def test_clt_bound(self):
        p = _params(seed=6)
        n = 100_000
        sigma = 0.8 * np.exp(p.log_std)
        # n calls of sample() consume one generator sequentially; the batched draw
        # below reproduces the same stream (checked on the first rows)
        eps = np.random.default_rng(11).standard_normal((n, p.dim))
        xs = p.mean + sigma * eps
        r = np.random.default_rng(11)
        for row in xs[:5]:
            np.testing.assert_array_equal(sample(p, 0.8, r).x, row)
        assert np.all(np.abs(xs.mean(axis=0) - p.mean) <= 4 * sigma / math.sqrt(n))

    def test_sample_mean_small_n(self):
        p = _params(seed=6)
        r = np.random.default_rng(12)
        n = 4000
        xs = np.stack([sample(p, 0.8, r).x for _ in range(n)])
        sigma = 0.8 * np.exp(p.log_std)
        assert np.all(np.abs(xs.mean(axis=0) - p.mean) <= 4.5 * sigma / math.sqrt(n))

    @pytest.mark.parametrize("scale", [0.0, -1.0])
    def test_noise_scale_positive(self, scale):
        with pytest.raises(ValueError):
            sample(_params(), scale, np.random.default_rng(0))


class TestGradLogProb:
    def test_zero_at_mode(self):
        p = _params(seed=3)
        g_mean, _ = grad_log_prob(p, p.mean, 0.8)
        np.testing.assert_array_equal(g_mean, 0.0)

    def test_unit_gaussian_value(self):
        p = _unit_params()
        x = np.zeros(SMALL.dim)
        x[0] = 2.0
        g_mean, g_ls = grad_log_prob(p, x, 1.0)
        assert g_mean[0] == 2.0
        assert g_ls[0] == 3.0

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        p = _params(seed=seed)
        r = np.random.default_rng(100 + seed)
        x = p.mean + r.normal(0, 0.5, p.dim)
        g_mean, g_ls = grad_log_prob(p, x, 0.8)
        fd_mean = _central(lambda m: log_prob(p.replace(mean=m), x, 0.8), p.mean.copy())
        fd_ls = _central(lambda s: log_prob(p.replace(log_std=s), x, 0.8), p.log_std.copy())
        assert _rel_err(g_mean, fd_mean) <= 1e-5
        assert _rel_err(g_ls, fd_ls) <= 1e-5


class TestKL:
    def test_self_is_zero(self):
        p = _params()
        assert kl_divergence(p, p) == 0.0

    def test_unit_shift(self):
        ref = _unit_params()
        mean = np.zeros(SMALL.dim)
        mean[0] = 1.0
        assert kl_divergence(ref.replace(mean=mean), ref) == pytest.approx(0.5, abs=1e-15)

    @given(st.integers(0, 10_000), st.integers(0, 10_000))
    def test_non_negative(self, a, b):
        assert kl_divergence(_params(seed=a), _params(seed=b)) >= 0.0

    @given(st.integers(0, 1000), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
    def test_monotone_in_distance(self, seed, t1, t2):
        ref = _params(seed=seed)
        direction = np.random.default_rng(seed).normal(size=SMALL.dim)
        lo, hi = sorted((t1, t2))
        near = ref.replace(mean=ref.mean + lo * direction)
        far = ref.replace(mean=ref.mean + hi * direction)
        assert kl_divergence(near, ref) <= kl_divergence(far, ref)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            kl_divergence(_params(), _params(Layout(m_views=3)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        p, ref = _params(seed=seed), _params(seed=seed + 50)
        g_mean, g_ls = grad_kl(p, ref)
        fd_mean = _central(lambda m: kl_divergence(p.replace(mean=m), ref), p.mean.copy())
        fd_ls = _central(lambda s: kl_divergence(p.replace(log_std=s), ref), p.log_std.copy())
        assert _rel_err(g_mean, fd_mean) <= 1e-5
        assert _rel_err(g_ls, fd_ls) <= 1e-5


class TestCheckpoint:
    def test_roundtrip_exact(self):
        p = _params(Layout(m_views=9, contrast_unit=3.0), seed=8)
        q = loads_checkpoint(dumps_checkpoint(p))
        assert q.mean.tobytes() == p.mean.tobytes()
        assert q.log_std.tobytes() == p.log_std.tobytes()
        assert q.layout == p.layout

    def test_header_and_body(self):
        p = _params(seed=8)
        data = dumps_checkpoint(p)
        header, _, body = data.partition(b"end_header\n")
        lines = header.decode("ascii").splitlines()
        assert lines[:4] == ["mvgrpo-policy", "layout_version 1", f"d {SMALL.dim}", "m_views 2"]
        assert "fields mean,log_std" in lines
        np.testing.assert_array_equal(np.frombuffer(body, "<f8"), np.r_[p.mean, p.log_std])

    @pytest.mark.parametrize("mutate", [
        lambda b: b.replace(b"mvgrpo-policy", b"something-else"),
        lambda b: b.replace(b"layout_version 1", b"layout_version 2"),
        lambda b: b[:-8],
        lambda b: b.split(b"end_header")[0],
    ])
    def test_corrupt(self, mutate):
        with pytest.raises(ValueError):
            loads_checkpoint(mutate(dumps_checkpoint(_params())))
