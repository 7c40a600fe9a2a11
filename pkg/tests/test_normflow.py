import numpy as np
import pytest

from conformer import numcore as nc
from conformer.normflow import (
    NF_VARIANTS,
    FlowConditioner,
    FlowParams,
    encoder_latent,
    flow_chain,
    flow_forecast,
    flow_latent,
    init_flow,
    pool_latent,
)
from conformer.numcore import Tensor, grad_check


def softplus(x):
    return np.logaddexp(0.0, x)


def fcn(x, net):
    h = np.tanh(x @ net.hidden.weight.data + net.hidden.bias.data)
    return h @ net.out.weight.data + net.out.bias.data


def ref_cond(x, cond):
    return fcn(x, cond.mu), softplus(fcn(x, cond.sigma)) + 1e-6


def randomize(module, rng, scale=0.5):
    for p in module.parameters():
        p.data = rng.normal(scale=scale, size=p.shape)


def make_identity(cond: FlowConditioner, sigma_bias=50.0):
    """mu == 0 and sigma == softplus(sigma_bias) + 1e-6 regardless of input."""
    for p in cond.mu.parameters():
        p.data[:] = 0
    cond.sigma.out.weight.data[:] = 0
    cond.sigma.out.bias.data[:] = sigma_bias


UNIT_BIAS = np.log(np.expm1(1.0 - 1e-6))  # softplus(b) + 1e-6 == 1


def make_unit(cond: FlowConditioner):
    make_identity(cond, sigma_bias=UNIT_BIAS)


def make_collapse(cond: FlowConditioner):
    cond.sigma.out.weight.data[:] = 0
    cond.sigma.out.bias.data[:] = -60.0


@pytest.fixture
def flow(rng):
    p = FlowParams(4, 3, 2, rng)
    randomize(p, rng)
    return p


# -- encoder latent ----------------------------------------------------------

def test_zero_eps_gives_mu(flow, rng):
    h = Tensor(rng.normal(size=(6, 4)))
    z = encoder_latent(h, flow.enc, np.zeros((6, 4)))
    np.testing.assert_array_equal(z.data, flow.enc.mu(h).data)


def test_unit_sigma_gives_eps(rng):
    cond = FlowConditioner(4, 4, rng)
    make_identity(cond)
    eps = rng.normal(size=(6, 4))
    z = encoder_latent(Tensor(rng.normal(size=(6, 4))), cond, eps)
    # softplus(50) == 50 to float precision; rescale to compare with eps
    np.testing.assert_allclose(z.data / (50.0 + 1e-6), eps, atol=1e-12)


def test_sigma_strictly_positive(flow):
    _, s = flow.enc(Tensor(np.full((3, 4), -1e3)))
    assert (s.data > 0).all()


def test_encoder_latent_monte_carlo_variance(flow, rng):
    h = rng.normal(size=(3, 4))
    eps = rng.standard_normal((10_000, 3, 4))
    z = encoder_latent(Tensor(h), flow.enc, eps).data
    _, sigma = ref_cond(h, flow.enc)
    rel = np.abs(z.var(axis=0, ddof=1) / sigma ** 2 - 1)
    assert rel.max() <= 0.05


# -- init and chain ------------------------------------------------------------

def test_init_zero_latent_gives_mu(flow, rng):
    h = Tensor(rng.normal(size=(5, 4)))
    z0 = init_flow(h, Tensor(np.zeros((1, 4))), flow.init)
    np.testing.assert_array_equal(z0.data, flow.init.mu(h).data)


def test_init_identity_passes_latent(rng):
    cond = FlowConditioner(4, 4, rng)
    make_unit(cond)
    ze = rng.normal(size=(5, 4))
    z0 = init_flow(Tensor(rng.normal(size=(5, 4))), Tensor(ze), cond)
    np.testing.assert_allclose(z0.data, ze, atol=1e-14)


def test_init_expansion_oracle(flow, rng):
    h = rng.normal(size=(2, 5, 4))
    ze = rng.normal(size=(2, 1, 4))
    mu, sigma = ref_cond(h, flow.init)
    got = init_flow(Tensor(h), Tensor(ze), flow.init).data
    assert np.abs(got - (mu + sigma * ze)).max() <= 1e-12


def test_init_length_mismatch(flow, rng):
    with pytest.raises(ValueError, match="does not align"):
        init_flow(Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(3, 4))), flow.init)


def test_empty_chain_is_identity(rng):
    p = FlowParams(4, 2, 0, rng)
    z0 = Tensor(rng.normal(size=(5, 4)))
    assert flow_chain(z0, Tensor(rng.normal(size=(5, 4))), p.chain) is z0


def test_identity_chain(rng):
    p = FlowParams(4, 2, 3, rng)
    randomize(p, rng)
    for c in p.chain:
        make_unit(c)
    z0 = rng.normal(size=(5, 4))
    zt = flow_chain(Tensor(z0), Tensor(rng.normal(size=(5, 4))), p.chain)
    assert np.abs(zt.data - z0).max() <= 1e-10


def test_chain_loop_oracle(flow, rng):
    h = rng.normal(size=(5, 4))
    z = rng.normal(size=(5, 4))
    got = flow_chain(Tensor(z), Tensor(h), flow.chain).data
    for cond in flow.chain:
        nxt = np.empty_like(z)
        for t in range(5):
            mu, sigma = ref_cond(np.concatenate([h[t], z[t]]), cond)
            nxt[t] = mu + sigma * z[t]
        z = nxt
    assert np.abs(got - z).max() <= 1e-12


# -- forecast ------------------------------------------------------------------

def test_forecast_shapes_and_zero_variance_single_draw(flow, rng):
    h_e, h_d = Tensor(rng.normal(size=(2, 8, 4))), Tensor(rng.normal(size=(2, 6, 4)))
    mean, var = flow_forecast(h_e, h_d, flow, L_y=3, rng=rng)
    assert mean.shape == (2, 3, 3) and var.shape == (2, 3, 3)
    assert (var == 0).all()


def test_forecast_zero_eps_identity_chain_is_mu_projection(rng):
    p = FlowParams(4, 3, 2, rng)
    randomize(p, rng)
    for c in p.chain:
        make_unit(c)
    h_e, h_d = rng.normal(size=(8, 4)), rng.normal(size=(6, 4))
    mean, _ = flow_forecast(Tensor(h_e), Tensor(h_d), p, L_y=3, eps=np.zeros((1, 8, 4)))
    mu_e, _ = ref_cond(h_e, p.enc)
    mu_d, sig_d = ref_cond(h_d, p.init)
    z0 = mu_d + sig_d * mu_e.mean(axis=0)
    want = z0[-3:] @ p.out.weight.data + p.out.bias.data
    np.testing.assert_allclose(mean.data, want, atol=1e-12)


def test_forecast_variance_nonnegative(flow, rng):
    _, var = flow_forecast(Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=(6, 4))),
                           flow, L_y=4, n_samples=50, rng=rng)
    assert (var >= 0).all() and var.max() > 0


def test_sigma_collapse_variance(flow, rng):
    make_collapse(flow.enc)
    for c in flow.chain:
        make_collapse(c)
    _, var = flow_forecast(Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=(6, 4))),
                           flow, L_y=4, n_samples=200, rng=rng)
    assert var.max() <= 1e-6


def test_forecast_seeded_determinism(flow, rng):
    h_e, h_d = Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=(6, 4)))
    a = flow_forecast(h_e, h_d, flow, 3, 5, np.random.default_rng(9))
    b = flow_forecast(h_e, h_d, flow, 3, 5, np.random.default_rng(9))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1], b[1])


def test_standard_error_halves(flow, rng):
    """Quadrupling the draw count halves the spread of the sample mean."""
    h_e, h_d = Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=(6, 4)))
    reps = 40

    def spread(n):
        means = np.stack([flow_forecast(h_e, h_d, flow, 2, n, rng)[0].data for _ in range(reps)])
        return means.std(axis=0, ddof=1).mean()

    ratio = spread(1000) / spread(4000)
    # sampling distribution of the spread ratio over 40 repeats: about 2 +- 0.25
    assert 1.5 <= ratio <= 2.6


def test_forecast_rejects_bad_inputs(flow, rng):
    h_e, h_d = Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=(6, 4)))
    with pytest.raises(ValueError):
        flow_forecast(h_e, h_d, flow, 3, n_samples=0)
    with pytest.raises(ValueError, match="eps shape"):
        flow_forecast(h_e, h_d, flow, 3, eps=np.zeros((1, 6, 4)))
    with pytest.raises(ValueError, match="unknown flow variant"):
        flow_forecast(h_e, h_d, flow, 3, rng=rng, variant="bogus")


def test_variants_distinct(flow, rng):
    h_e, h_d = Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=(6, 4)))
    outs = {}
    for v in ("flow", "ze", "zd", "z0"):
        shape = h_d.shape if v == "zd" else h_e.shape
        outs[v] = flow_latent(h_e, h_d, flow, np.random.default_rng(3).normal(size=shape), v).data
        assert outs[v].shape == (6, 4)
    vals = list(outs.values())
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            assert np.abs(vals[i] - vals[j]).max() > 1e-6
    assert "none" in NF_VARIANTS


def test_pool_latent_mean(rng):
    z = rng.normal(size=(2, 7, 3))
    np.testing.assert_allclose(pool_latent(Tensor(z)).data, z.mean(axis=1, keepdims=True), atol=1e-15)


@pytest.mark.parametrize("variant", ["flow", "ze", "zd", "z0"])
def test_forecast_gradients_fixed_eps(variant, rng):
    p = FlowParams(3, 2, 2, rng)
    randomize(p, rng)
    h_e = nc.parameter(rng.normal(size=(2, 5, 3)))
    h_d = nc.parameter(rng.normal(size=(2, 4, 3)))
    shape = (2, 2, 3) if variant == "zd" else h_e.shape
    eps = rng.normal(size=(3, *shape))
    w = Tensor(rng.normal(size=(2, 2, 2)))

    def f():
        mean, _ = flow_forecast(h_e, h_d, p, 2, n_samples=3, variant=variant, eps=eps)
        return (mean * w).sum()

    assert grad_check(f, [h_e, h_d, *p.parameters()]) <= 1e-4
