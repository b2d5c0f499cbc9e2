import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_complex
from fdsic.frontend import fir_convolve
from fdsic.neuralnet import (
    KINDS,
    HAMMERSTEIN_MLP,
    LayoutError,
    MagnitudeMlpSpec,
    ModelArch,
    ParamVector,
    backward,
    context_matrix,
    count_macs,
    count_params,
    default_arch,
    forward,
    init_params,
    load_checkpoint,
    mlp_forward,
    mse_and_grad,
    param_layout,
    save_checkpoint,
    zero_output_params,
)
from fdsic.signal import ComplexSeq
from fdsic.training import gradient_check

EXPECTED_PARAMS = {"linear": 26, "hammerstein": 42, "wiener": 51, "wiener_hammerstein": 66, "ffnn": 495}


@pytest.mark.parametrize("kind", KINDS)
def test_param_counts(kind):
    assert count_params(default_arch(kind)) == EXPECTED_PARAMS[kind]


def test_gmacs_convention():
    assert count_macs(default_arch("linear"), 20000) == pytest.approx(26 * 20000 / 1e9)
    with pytest.raises(ValueError):
        count_macs(default_arch("linear"), -1)


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_check(kind):
    assert gradient_check(default_arch(kind), n=64, seed=3) < 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_backward_matches_mse_gradient(kind, rng):
    arch = default_arch(kind)
    params = init_params(arch, 2)
    x, t = random_complex(rng, 50), random_complex(rng, 50)
    _, grad = mse_and_grad(arch, params, x, t)
    up = (2.0 / 50) * (forward(arch, params, x) - t)
    np.testing.assert_allclose(backward(arch, params, x, up).values, grad, rtol=1e-12, atol=1e-15)


def test_context_matrix_rows():
    x = np.arange(1, 6) + 0j
    X = context_matrix(x, 3)
    np.testing.assert_array_equal(X[0], [1, 0, 0])
    np.testing.assert_array_equal(X[4], [5, 4, 3])


def test_linear_forward_is_fir(rng):
    arch = default_arch("linear")
    params = init_params(arch, 1)
    params.values += 0.3 * rng.standard_normal(len(params))
    x = random_complex(rng, 100)
    np.testing.assert_allclose(forward(arch, params, x), fir_convolve(x, params.segment("fir.taps")), atol=1e-13)


def test_block_models_compose(rng):
    x = random_complex(rng, 80)
    wh = default_arch("wiener_hammerstein")
    p = init_params(wh, 4)
    taps = p.segment("fir.taps")
    inner = mlp_forward(x, wh.mlp_pre, p, "mlp_pre")
    expected = mlp_forward(fir_convolve(inner, taps), wh.mlp_post, p, "mlp_post")
    np.testing.assert_allclose(forward(wh, p, x), expected, atol=1e-13)


def test_magnitude_mlp_preserves_phase(rng):
    spec = MagnitudeMlpSpec(4, "tanh", use_bias=False)
    p = {"w_in": rng.uniform(0, 1, 4), "w_out": np.abs(rng.standard_normal(4))}
    x = random_complex(rng, 30)
    y = mlp_forward(x, spec, p)
    np.testing.assert_allclose(np.angle(y / x), 0, atol=1e-12)
    assert mlp_forward(0j, spec, p) == 0


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 2**32), st.integers(1, 40))
def test_causality(kind, seed, k):
    """Output sample k depends only on inputs 0..k."""
    rng = np.random.default_rng(seed)
    arch = default_arch(kind)
    params = init_params(arch, seed)
    x = random_complex(rng, 48)
    x2 = x.copy()
    x2[k:] = random_complex(rng, 48 - k)
    np.testing.assert_allclose(forward(arch, params, x)[:k], forward(arch, params, x2)[:k], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 2**32))
def test_init_deterministic(kind, seed):
    arch = default_arch(kind)
    a, b = init_params(arch, seed), init_params(arch, seed)
    assert np.array_equal(a.values, b.values)
    assert np.all(np.isfinite(a.values))


@pytest.mark.parametrize("kind", KINDS)
def test_zero_output_init_gives_zero_output(kind, rng):
    arch = default_arch(kind)
    y = forward(arch, zero_output_params(arch, 1), random_complex(rng, 20))
    np.testing.assert_array_equal(y, 0)


def test_forward_accepts_complexseq(rng):
    arch = default_arch("wiener")
    x = ComplexSeq(random_complex(rng, 20), 10e6)
    y = forward(arch, init_params(arch), x)
    assert isinstance(y, ComplexSeq) and y.sample_rate_hz == 10e6


def test_layout_mismatch_rejected():
    with pytest.raises(LayoutError):
        forward(default_arch("wiener"), init_params(default_arch("hammerstein")), np.ones(4, complex))
    with pytest.raises(LayoutError):
        ParamVector(np.zeros(3), param_layout(default_arch("linear")))


def test_invalid_arch():
    with pytest.raises(ValueError):
        default_arch("transformer")
    with pytest.raises(ValueError):
        ModelArch("hammerstein", 13)


def test_arch_dict_roundtrip():
    for kind in KINDS:
        arch = default_arch(kind)
        assert ModelArch.from_dict(arch.to_dict()) == arch
    assert HAMMERSTEIN_MLP.activation == "tanh"


@pytest.mark.parametrize("kind", KINDS)
def test_checkpoint_roundtrip(tmp_path, kind):
    arch = default_arch(kind)
    params = init_params(arch, 9)
    save_checkpoint(tmp_path / "cell.premodel", arch, params, seed=9)
    save_checkpoint(tmp_path / "cell", arch, zero_output_params(arch), seed=1)
    arch2, params2, seed = load_checkpoint(tmp_path / "cell.premodel")
    assert arch2 == arch and seed == 9
    np.testing.assert_array_equal(params2.values, params.values)
