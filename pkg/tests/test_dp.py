import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from dpfedsim.dp import (
    DpConfig,
    Mechanism,
    NoiseScale,
    clip_update,
    gaussian_sigma,
    laplace_scale,
    ma_sigma,
    noise_scale_for,
    perturb,
    sample_noise,
    sensitivity,
)
from dpfedsim.errors import NonFiniteError, ValidationError
from dpfedsim.mlp import LayerShape, init_model
from dpfedsim.seeds import derive_rng

PAPER_MU = 0.0046
PAPER_CLIP = 1.0
PAPER_N = 1470
PAPER_DELTA = 1e-5
PAPER_Q = 1024 / 1470


class TestClip:
    def test_under_norm_unchanged(self):
        v = np.array([0.3, 0.4])  # norm 0.5
        out = clip_update(v, 1.0)
        assert np.array_equal(out, v)

    def test_three_four_five(self):
        out = clip_update(np.array([3.0, 4.0]), 1.0)
        assert np.allclose(out, [0.6, 0.8], rtol=1e-15)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12

    def test_zero_vector(self):
        out = clip_update(np.zeros(5), 2.0)
        assert np.array_equal(out, np.zeros(5))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            clip_update(np.array([1.0, np.inf]), 1.0)

    def test_huge_vector_does_not_overflow(self):
        # naive sum of squares overflows beyond ~1e154 per coordinate
        out = clip_update(np.array([1e250, 1e250]), 1.0)
        assert np.allclose(out, [1 / math.sqrt(2)] * 2, rtol=1e-12)
        out = clip_update(np.full(4, 1e308), 7.0)
        assert abs(np.linalg.norm(out) - 7.0) < 1e-11
        # huge but under an even larger bound: untouched
        big = np.array([1e200, -1e200])
        assert np.array_equal(clip_update(big, 1e308), big)

    @given(
        arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)),
        st.floats(1e-6, 1e3),
    )
    @settings(max_examples=100, deadline=None)
    def test_property_norm_capped_direction_kept(self, v, clip_norm):
        out = clip_update(v, clip_norm)
        assert np.linalg.norm(out) <= clip_norm * (1 + 1e-12)
        assert np.linalg.norm(out) <= np.linalg.norm(v) * (1 + 1e-12)
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            cos = float(out @ v) / (np.linalg.norm(out) * norm)
            assert abs(cos - 1.0) < 1e-12


class TestCalibration:
    def test_sensitivity_paper_values(self):
        dt = sensitivity(PAPER_MU, PAPER_CLIP, PAPER_N)
        assert oracles.rel_err(dt, oracles.sensitivity(PAPER_MU, PAPER_CLIP, PAPER_N)) < 1e-12
        assert abs(dt - 6.2585e-6) < 1e-9

    def test_sensitivity_scaling_laws(self):
        dt = sensitivity(PAPER_MU, PAPER_CLIP, PAPER_N)
        assert sensitivity(2 * PAPER_MU, PAPER_CLIP, PAPER_N) == 2 * dt
        assert sensitivity(PAPER_MU, PAPER_CLIP, 2 * PAPER_N) == dt / 2

    def test_gaussian_sigma_example(self):
        dt = sensitivity(PAPER_MU, PAPER_CLIP, PAPER_N)
        scale = gaussian_sigma(dt, 0.5, PAPER_DELTA)
        assert scale.mechanism is Mechanism.GAUSSIAN
        assert oracles.rel_err(scale.value, oracles.gaussian_sigma(dt, 0.5, PAPER_DELTA)) < 1e-12
        assert abs(scale.value - 6.064e-5) < 1e-8

    def test_gaussian_monotone_in_epsilon(self):
        dt = 1e-5
        values = [gaussian_sigma(dt, eps, PAPER_DELTA).value for eps in (0.01, 10.0, 50.0)]
        assert values[2] < values[1] < values[0]

    def test_gaussian_zero_sensitivity(self):
        assert gaussian_sigma(0.0, 1.0, PAPER_DELTA).value == 0.0

    def test_gaussian_delta_domain(self):
        with pytest.raises(ValidationError):
            gaussian_sigma(1e-5, 1.0, 1.25)
        with pytest.raises(ValidationError):
            gaussian_sigma(1e-5, 1.0, 0.0)

    def test_laplace_example(self):
        dt = sensitivity(PAPER_MU, PAPER_CLIP, PAPER_N)
        scale = laplace_scale(dt, 0.5)
        assert oracles.rel_err(scale.value, oracles.laplace_scale(dt, 0.5)) < 1e-12
        assert abs(scale.value - 1.2517e-5) < 1e-9

    def test_laplace_scaling(self):
        dt = 3e-6
        assert laplace_scale(dt, 2.0).value == laplace_scale(dt, 1.0).value / 2
        assert laplace_scale(0.0, 1.0).value == 0.0

    def test_ma_example(self):
        dt = sensitivity(PAPER_MU, PAPER_CLIP, PAPER_N)
        scale = ma_sigma(dt, 0.5, PAPER_DELTA, PAPER_Q, 1000)
        assert scale.mechanism is Mechanism.MOMENTS_ACCOUNTANT
        assert oracles.rel_err(
            scale.value, oracles.ma_sigma(dt, 0.5, PAPER_DELTA, PAPER_Q, 1000)
        ) < 1e-12
        assert abs(scale.value - 1.585e-3) < 1e-6

    def test_ma_sqrt_law_in_rounds(self):
        dt = 1e-5
        c1 = ma_sigma(dt, 0.5, PAPER_DELTA, 0.5, 100).value
        c4 = ma_sigma(dt, 0.5, PAPER_DELTA, 0.5, 400).value
        assert abs(c4 - 2 * c1) < 1e-18

    def test_ma_closed_form_q1_t1(self):
        dt = 1e-5
        scale = ma_sigma(dt, 2.0, 1 / math.e, 1.0, 1)
        assert abs(scale.value - dt * math.sqrt(2.0) / 2.0) < 1e-20

    def test_linear_in_dt(self):
        for fn in (
            lambda dt: gaussian_sigma(dt, 0.7, 1e-5).value,
            lambda dt: laplace_scale(dt, 0.7).value,
            lambda dt: ma_sigma(dt, 0.7, 1e-5, 0.5, 10).value,
        ):
            assert fn(2e-6) == 2 * fn(1e-6)

    def test_strictly_decreasing_in_epsilon(self):
        grid = (0.01, 0.1, 0.3, 0.5, 1.0, 10.0, 50.0)
        for fn in (
            lambda eps: gaussian_sigma(1e-5, eps, 1e-5).value,
            lambda eps: laplace_scale(1e-5, eps).value,
            lambda eps: ma_sigma(1e-5, eps, 1e-5, 0.5, 100).value,
        ):
            values = [fn(eps) for eps in grid]
            assert all(a > b for a, b in zip(values, values[1:]))

    def test_noise_scale_for_dispatch(self):
        base = dict(
            epsilon=0.5,
            delta=PAPER_DELTA,
            clip_norm=PAPER_CLIP,
            learning_rate=PAPER_MU,
            dataset_size=PAPER_N,
            batch_fraction=PAPER_Q,
            max_rounds=1000,
        )
        dt = sensitivity(PAPER_MU, PAPER_CLIP, PAPER_N)
        assert noise_scale_for(DpConfig(mechanism=Mechanism.NONE, **{**base, "epsilon": math.inf})).value == 0.0
        assert noise_scale_for(DpConfig(mechanism=Mechanism.GAUSSIAN, **base)).value == gaussian_sigma(dt, 0.5, PAPER_DELTA).value
        assert noise_scale_for(DpConfig(mechanism=Mechanism.LAPLACE, **base)).value == laplace_scale(dt, 0.5).value
        assert noise_scale_for(DpConfig(mechanism=Mechanism.MOMENTS_ACCOUNTANT, **base)).value == ma_sigma(dt, 0.5, PAPER_DELTA, PAPER_Q, 1000).value


class TestDpConfig:
    def test_infinite_epsilon_requires_none(self):
        with pytest.raises(ValidationError):
            DpConfig(
                mechanism=Mechanism.GAUSSIAN,
                epsilon=math.inf,
                delta=1e-5,
                clip_norm=1.0,
                learning_rate=0.01,
                dataset_size=100,
                batch_fraction=1.0,
                max_rounds=10,
            )

    @pytest.mark.parametrize(
        "field,value",
        [
            ("epsilon", -1.0),
            ("delta", 0.0),
            ("delta", 1.0),
            ("clip_norm", 0.0),
            ("learning_rate", 0.0),
            ("dataset_size", 0),
            ("batch_fraction", 0.0),
            ("batch_fraction", 1.5),
            ("max_rounds", 0),
        ],
    )
    def test_bounds(self, field, value):
        kwargs = dict(
            mechanism=Mechanism.GAUSSIAN,
            epsilon=0.5,
            delta=1e-5,
            clip_norm=1.0,
            learning_rate=0.01,
            dataset_size=100,
            batch_fraction=1.0,
            max_rounds=10,
        )
        kwargs[field] = value
        with pytest.raises(ValidationError):
            DpConfig(**kwargs)

    def test_mechanism_parse(self):
        assert Mechanism.parse("Gaussian") is Mechanism.GAUSSIAN
        assert Mechanism.parse("moments_accountant") is Mechanism.MOMENTS_ACCOUNTANT
        with pytest.raises(ValidationError):
            Mechanism.parse("fuzzy")


class TestSampling:
    def test_none_is_exact_zero(self):
        out = sample_noise(Mechanism.NONE, NoiseScale(0.0, Mechanism.NONE), 7, derive_rng(0, 9))
        assert np.array_equal(out, np.zeros(7))

    def test_gaussian_moments_million_draws(self):
        rng = derive_rng(123, 0)
        draws = sample_noise(Mechanism.GAUSSIAN, NoiseScale(1.0, Mechanism.GAUSSIAN), 10**6, rng)
        assert abs(draws.mean()) < 0.005
        assert 0.995 <= draws.std() <= 1.005

    def test_laplace_variance_million_draws(self):
        rng = derive_rng(456, 0)
        draws = sample_noise(Mechanism.LAPLACE, NoiseScale(1.0, Mechanism.LAPLACE), 10**6, rng)
        assert 2 * 0.99 <= draws.var() <= 2 * 1.01

    def test_stream_reproducibility(self):
        scale = NoiseScale(0.3, Mechanism.GAUSSIAN)
        a = sample_noise(Mechanism.GAUSSIAN, scale, 100, derive_rng(7, 1, 2, 3))
        b = sample_noise(Mechanism.GAUSSIAN, scale, 100, derive_rng(7, 1, 2, 3))
        c = sample_noise(Mechanism.GAUSSIAN, scale, 100, derive_rng(7, 1, 2, 4))
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()

    def test_mechanism_scale_mismatch(self):
        with pytest.raises(ValidationError):
            sample_noise(Mechanism.GAUSSIAN, NoiseScale(1.0, Mechanism.LAPLACE), 3, derive_rng(0, 0))

    def test_ma_uses_gaussian_draws(self):
        scale_value = 0.5
        a = sample_noise(
            Mechanism.MOMENTS_ACCOUNTANT,
            NoiseScale(scale_value, Mechanism.MOMENTS_ACCOUNTANT),
            50,
            derive_rng(3, 1),
        )
        b = sample_noise(
            Mechanism.GAUSSIAN, NoiseScale(scale_value, Mechanism.GAUSSIAN), 50, derive_rng(3, 1)
        )
        assert np.array_equal(a, b)


class TestPerturb:
    def test_zero_noise_identity(self):
        params = init_model(LayerShape((21, 4, 5)), seed=0)
        out = perturb(params, np.zeros_like(params.values))
        assert np.array_equal(out.values, params.values)

    def test_additive_inverse(self):
        params = init_model(LayerShape((21, 4, 5)), seed=1)
        noise = derive_rng(9, 0).standard_normal(params.values.shape)
        out = perturb(perturb(params, noise), -noise)
        assert np.max(np.abs(out.values - params.values)) < 1e-12

    def test_scalar_spot_check(self):
        params = init_model(LayerShape((21, 4, 5)), seed=2)
        noise = derive_rng(10, 0).standard_normal(params.values.shape)
        out = perturb(params, noise)
        for idx in [0, 5, 44, len(noise) - 1]:
            assert out.values[idx] == params.values[idx] + noise[idx]

    def test_length_mismatch(self):
        params = init_model(LayerShape((21, 4, 5)), seed=3)
        with pytest.raises(ValidationError):
            perturb(params, np.zeros(3))


def binned_likelihood_ratio(epsilon: float, trials: int, seed: int) -> float:
    """Histogram ratio of a 1-d Laplace mechanism on adjacent inputs 0 and 1."""
    scale = NoiseScale(1.0 / epsilon, Mechanism.LAPLACE)
    out0 = 0.0 + sample_noise(Mechanism.LAPLACE, scale, trials, derive_rng(seed, 0))
    out1 = 1.0 + sample_noise(Mechanism.LAPLACE, scale, trials, derive_rng(seed, 1))
    edges = np.arange(-3.5, 4.5001, 0.5)
    c0, _ = np.histogram(np.clip(out0, -3.5, 4.5), bins=edges)
    c1, _ = np.histogram(np.clip(out1, -3.5, 4.5), bins=edges)
    assert c0.min() > 0 and c1.min() > 0
    ratios = np.maximum(c0 / c1, c1 / c0)
    return float(ratios.max())


def test_empirical_dp_smoke_desk_scale():
    ratio = binned_likelihood_ratio(epsilon=1.0, trials=10**5, seed=2024)
    assert ratio <= math.exp(1.0) * 1.15
