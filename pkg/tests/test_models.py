"""Networks, posterior sampling, optimizers, and end-to-end loss gradients."""

import numpy as np
import pytest

from predrisk import autodiff as ad
from predrisk.distributions import MeanFieldGaussian, kl_mean_field
from predrisk.models import (
    MlpArch,
    OptimizerState,
    VariationalPosterior,
    init_params,
    mlp_forward,
    mlp_forward_np,
    optimizer_step,
    posterior_sample,
    posterior_sample_np,
)
from predrisk.objectives import (
    BoundParams,
    elbo_loss_node,
    iwae_loss_node,
    pac2t_aux,
    pac2t_loss_node,
    pacm_loss_node,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


def mlp_oracle(vec, widths, activation, x):
    """Independent loop-and-index forward pass used as the reference."""
    act = {"tanh": np.tanh, "elu": lambda v: np.where(v > 0, v, np.expm1(v))}[activation]
    h = x
    offset = 0
    for layer in range(len(widths) - 1):
        w_in, w_out = widths[layer], widths[layer + 1]
        w = np.empty((w_in, w_out))
        for i in range(w_in):
            for j in range(w_out):
                w[i, j] = vec[offset]
                offset += 1
        b = vec[offset : offset + w_out]
        offset += w_out
        h = h @ w + b
        if layer != len(widths) - 2:
            h = act(h)
    return h


class TestMlpForward:
    def test_zero_parameters_give_zero_output(self):
        arch = MlpArch((1, 20, 1), activation="tanh")
        x = np.linspace(-3, 3, 11).reshape(-1, 1)
        out = mlp_forward(ad.Node(np.zeros(arch.param_count())), arch, x)
        np.testing.assert_array_equal(out.value, np.zeros((11, 1)))

    def test_single_linear_layer_identity(self):
        arch = MlpArch((2, 2), activation="tanh")
        params = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])  # identity weights, zero bias
        x = np.random.default_rng(0).normal(0, 1, (5, 2))
        out = mlp_forward(ad.Node(params), arch, x)
        np.testing.assert_allclose(out.value, x, atol=1e-15)

    @pytest.mark.parametrize("widths,act", [((1, 20, 1), "tanh"), ((2, 7, 5, 3), "elu")])
    def test_matches_loop_oracle(self, widths, act):
        rng = np.random.default_rng(3)
        arch = MlpArch(widths, activation=act)
        vec = rng.normal(0, 1, arch.param_count())
        x = rng.normal(0, 2, (9, widths[0]))
        expected = mlp_oracle(vec, widths, act, x)
        np.testing.assert_allclose(mlp_forward(ad.Node(vec), arch, x).value, expected, atol=1e-12)
        np.testing.assert_allclose(mlp_forward_np(vec, arch, x), expected, atol=1e-12)

    def test_param_length_mismatch(self):
        arch = MlpArch((1, 4, 1))
        with pytest.raises(ValueError):
            mlp_forward(ad.Node(np.zeros(3)), arch, np.zeros((2, 1)))


def _mean_field_posterior(d, loc=0.0, raw=0.0):
    return VariationalPosterior(
        kind="mean-field",
        locs=np.full((1, d), loc),
        raw_scales=np.full((1, d), raw),
        component_probs=np.ones(1),
    )


class TestPosteriorSample:
    def test_collapsed_posterior_returns_locations(self):
        post = _mean_field_posterior(3, loc=1.5, raw=-45.0)
        sample = posterior_sample(post, np.random.default_rng(0), 4)
        np.testing.assert_allclose(sample.theta.value, 1.5, atol=1e-9)

    def test_sample_mean_clt(self):
        post = _mean_field_posterior(2, loc=0.7, raw=0.0)
        draws = posterior_sample_np(post, np.random.default_rng(1), 100_000)
        # 5 SEs at scale 1 / sqrt(1e5 * 2).
        assert abs(draws.mean() - 0.7) < 5.0 / np.sqrt(200_000)

    def test_reparameterization_passthrough_gradient(self):
        post = _mean_field_posterior(1, loc=0.3, raw=-0.2)
        sample = posterior_sample(post, np.random.default_rng(2), 8)
        g = ad.grad(ad.mean_(sample.theta), sample.param_nodes)
        np.testing.assert_array_equal(g[0], [1.0])  # d mean(theta) / d loc

    def test_graph_and_numpy_paths_share_draws(self):
        post = _mean_field_posterior(4, loc=0.1, raw=-0.5)
        a = posterior_sample(post, np.random.default_rng(7), 6).theta.value
        b = posterior_sample_np(post, np.random.default_rng(7), 6)
        np.testing.assert_array_equal(a, b)

    def test_log_q_minus_log_r_matches_density_oracle(self):
        rng = np.random.default_rng(11)
        post = VariationalPosterior(
            kind="mixture",
            locs=rng.normal(0, 1, (2, 3)),
            raw_scales=rng.uniform(-0.5, 0.5, (2, 3)),
            component_probs=np.array([0.5, 0.5]),
        )
        sample = posterior_sample(post, np.random.default_rng(5), 6)
        theta = sample.theta.value
        comp_lp = np.stack(
            [MeanFieldGaussian(post.locs[k], post.raw_scales[k]).log_prob(theta) for k in range(2)]
        )
        log_q = np.log(0.5) + comp_lp.max(axis=0) + np.log(
            np.sum(np.exp(comp_lp - comp_lp.max(axis=0)), axis=0)
        )
        log_r = MeanFieldGaussian(np.zeros(3), np.zeros(3)).log_prob(theta)
        np.testing.assert_allclose(sample.log_q_minus_log_r.value, log_q - log_r, atol=1e-10)

    def test_stratified_rows_per_component(self):
        post = VariationalPosterior(
            kind="mixture",
            locs=np.array([[-100.0], [100.0]]),
            raw_scales=np.full((2, 1), -3.0),
            component_probs=np.array([0.5, 0.5]),
        )
        theta = posterior_sample_np(post, np.random.default_rng(3), 6)
        assert np.all(theta[:3] < 0) and np.all(theta[3:] > 0)

    def test_indivisible_m_rejected(self):
        post = VariationalPosterior(
            kind="mixture",
            locs=np.zeros((2, 1)),
            raw_scales=np.zeros((2, 1)),
            component_probs=np.array([0.5, 0.5]),
        )
        with pytest.raises(ValueError):
            posterior_sample_np(post, np.random.default_rng(0), 5)


class TestOptimizers:
    def test_adam_first_step_magnitude(self):
        # Oracle: bias-corrected first step is lr * g / (|g| + eps) ~ lr.
        state = OptimizerState("adam", lr0=0.01)
        params = np.zeros(4)
        grads = np.array([3.0, -1.0, 0.5, 10.0])
        new = optimizer_step(state, params, grads)
        np.testing.assert_allclose(np.abs(new), 0.01, rtol=1e-6)
        np.testing.assert_allclose(np.sign(new), -np.sign(grads), atol=0)

    def test_zero_gradient_leaves_params_fixed(self):
        state = OptimizerState("adam", lr0=0.1)
        params = np.array([1.0, -2.0])
        new = optimizer_step(state, params, np.zeros(2))
        np.testing.assert_array_equal(new, params)

    def test_adagrad_recursion_oracle(self):
        # Oracle: with unit gradients and lr 1 the t-th update is 1/(sqrt(t)+eps).
        state = OptimizerState("adagrad", lr0=1.0)
        params = np.zeros(1)
        for t in range(1, 6):
            before = params.copy()
            params = optimizer_step(state, params, np.ones(1))
            expected = 1.0 / (np.sqrt(t) + 1e-8)
            assert abs((before - params)[0] - expected) < 1e-12

    def test_learning_rate_schedule_continuous_exponent(self):
        state = OptimizerState("adam", lr0=0.01, decay_rate=0.5, decay_steps=100_000)
        state.step = 50_000
        assert state.learning_rate() == pytest.approx(0.01 * 0.5**0.5, rel=1e-12)

    def test_nan_gradient_aborts(self):
        state = OptimizerState("adam", lr0=0.01)
        with pytest.raises(ad.GradientNaNError):
            optimizer_step(state, np.zeros(2), np.array([1.0, np.nan]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            optimizer_step(OptimizerState("adam", lr0=0.1), np.zeros(2), np.zeros(3))


class TestInitParams:
    def test_mean_field_starts_at_prior(self):
        arch = MlpArch((1, 20, 1))
        post, prior = init_params(arch, np.random.default_rng(0))
        assert post.dim == arch.param_count()
        assert kl_mean_field(post.components[0], prior) == 0.0

    def test_mixture_jitter_is_seeded(self):
        arch = MlpArch((1, 4, 1))
        post_a, _ = init_params(arch, np.random.default_rng(9), scheme="mixture")
        post_b, _ = init_params(arch, np.random.default_rng(9), scheme="mixture")
        np.testing.assert_array_equal(post_a.locs, post_b.locs)
        assert np.all(np.abs(post_a.locs) <= 0.1)
        assert not np.allclose(post_a.locs[0], post_a.locs[1])

    def test_flatten_unflatten_roundtrip(self):
        arch = MlpArch((1, 3, 1))
        post, _ = init_params(arch, np.random.default_rng(1), scheme="mixture")
        vec = post.flatten()
        vec2 = vec + 0.25
        post.unflatten(vec2)
        np.testing.assert_array_equal(post.flatten(), vec2)


def _loss_fd_setup(seed, m=4, n=6):
    """Fixed data and frozen noise for end-to-end loss gradient checks."""
    rng = np.random.default_rng(seed)
    arch = MlpArch((1, 4, 1), activation="tanh")
    d = arch.param_count()
    x = rng.normal(0, 2, (n, 1))
    y = rng.normal(0, 1, n)
    eps = rng.standard_normal((m, d))
    params = BoundParams(n=n, m=m, beta=1.0)
    vec0 = np.concatenate([rng.normal(0, 0.4, d), rng.normal(-0.4, 0.2, d)])
    return arch, d, x, y, eps, params, vec0


def _build_loss(loss_name, vec_node, arch, d, x, y, eps, params, pac2t_frozen=None):
    loc = ad.slice1d(vec_node, 0, d)
    raw = ad.slice1d(vec_node, d, 2 * d)
    theta = loc + ad.exp(raw) * ad.Node(eps)
    z = (theta - loc) * ad.exp(-raw)
    log_q = ad.sum_(-0.5 * _LOG_2PI - raw - 0.5 * z**2, axis=1)
    log_r = ad.sum_(-0.5 * _LOG_2PI - 0.5 * theta**2, axis=1)
    rows = []
    for j in range(eps.shape[0]):
        mu = ad.reshape(mlp_forward(ad.take_row(theta, j), arch, x), (-1,))
        rows.append(-0.5 * _LOG_2PI - 0.5 * (ad.as_node(y) - mu) ** 2)
    ll = ad.stack_rows(rows)
    kl = ad.mean_(log_q - log_r)
    if loss_name == "elbo":
        return elbo_loss_node(ll, kl, params)
    if loss_name == "pacm":
        return pacm_loss_node(ll, kl, params)
    if loss_name == "pac2t":
        return pac2t_loss_node(ll, kl, params, smoothing=0.1, aux=pac2t_frozen)
    log_w = ad.reshape(-(log_q - log_r), (-1, 1))
    return iwae_loss_node(ll, log_w)


class TestEndToEndGradients:
    @pytest.mark.parametrize("loss_name", ["elbo", "pacm", "iwae"])
    def test_losses_pass_finite_difference(self, loss_name):
        arch, d, x, y, eps, params, vec0 = _loss_fd_setup(0)
        f = lambda v: _build_loss(loss_name, v, arch, d, x, y, eps, params)
        assert ad.finite_diff_check(f, vec0, eps=1e-5) < 1e-5

    def test_pac2t_passes_with_pinned_aux(self):
        # Pin the frozen subexpressions at their base-point values so the
        # finite-difference oracle differentiates the same function the
        # reverse pass does.
        arch, d, x, y, eps, params, vec0 = _loss_fd_setup(1)
        live = lambda v: _build_loss("pac2t", v, arch, d, x, y, eps, params)
        base_ll = _collect_ll(vec0, arch, d, x, y, eps)
        frozen = pac2t_aux(base_ll, 0.1)
        pinned = lambda v: _build_loss("pac2t", v, arch, d, x, y, eps, params, pac2t_frozen=frozen)
        assert ad.finite_diff_check(pinned, vec0, eps=1e-5) < 1e-5
        # The live graph's stop_gradient reproduces exactly the pinned grads.
        va, vb = ad.Node(vec0), ad.Node(vec0)
        ga = ad.grad(live(va), [va])[0]
        gb = ad.grad(pinned(vb), [vb])[0]
        np.testing.assert_allclose(ga, gb, atol=1e-12)

    def test_mc_kl_estimate_matches_closed_form(self):
        # The sampled KL term agrees with the coordinate-sum closed form
        # within Monte-Carlo error.
        rng = np.random.default_rng(21)
        d = 5
        locs = rng.normal(0, 0.8, d)
        raws = rng.uniform(-0.6, 0.3, d)
        post = VariationalPosterior(
            kind="mean-field",
            locs=locs[None, :].copy(),
            raw_scales=raws[None, :].copy(),
            component_probs=np.ones(1),
        )
        sample = posterior_sample(post, np.random.default_rng(22), 10_000)
        vals = sample.log_q_minus_log_r.value
        closed = kl_mean_field(
            MeanFieldGaussian(locs, raws), MeanFieldGaussian(np.zeros(d), np.zeros(d))
        )
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - closed) <= 3.0 * se


def _collect_ll(vec, arch, d, x, y, eps):
    theta = vec[:d] + np.exp(vec[d:]) * eps
    outs = mlp_forward_np(theta, arch, x)
    mu = outs[..., 0]
    return -0.5 * _LOG_2PI - 0.5 * (y - mu) ** 2
