"""MLP likelihood networks, variational posteriors, and optimizers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .distributions import MeanFieldGaussian

__all__ = [
    "MlpArch",
    "VariationalPosterior",
    "PosteriorSample",
    "OptimizerState",
    "mlp_forward",
    "mlp_forward_np",
    "posterior_sample",
    "posterior_sample_np",
    "optimizer_step",
    "init_params",
]

_LOG_2PI = float(np.log(2.0 * np.pi))

_ACTIVATIONS = {
    "tanh": (ad.tanh, np.tanh),
    "elu": (ad.elu, lambda v: np.where(v > 0, v, np.expm1(v))),
}


@dataclass(frozen=True)
class MlpArch:
    """Dense network widths (input, hidden..., output) and hidden activation."""

    layer_widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def param_count(self) -> int:
        widths = self.layer_widths
        return sum(i * o + o for i, o in zip(widths[:-1], widths[1:]))


def mlp_forward(params: ad.Node, arch: MlpArch, x) -> ad.Node:
    """Dense forward pass from a flat parameter Node; last layer is linear."""
    if params.value.shape != (arch.param_count(),):
        raise ValueError(
            f"expected {arch.param_count()} parameters, got shape {params.value.shape}"
        )
    act = _ACTIVATIONS[arch.activation][0]
    h = ad.as_node(x)
    widths = arch.layer_widths
    offset = 0
    last = len(widths) - 2
    for layer, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = ad.reshape(ad.slice1d(params, offset, offset + w_in * w_out), (w_in, w_out))
        offset += w_in * w_out
        b = ad.slice1d(params, offset, offset + w_out)
        offset += w_out
        h = ad.matmul(h, w) + b
        if layer != last:
            h = act(h)
    return h


def mlp_forward_np(params: np.ndarray, arch: MlpArch, x: np.ndarray) -> np.ndarray:
    """Numpy-only forward pass; accepts (d,) or a stack (k, d) of parameters."""
    params = np.asarray(params, dtype=np.float64)
    single = params.ndim == 1
    stack = params[None, :] if single else params
    act = _ACTIVATIONS[arch.activation][1]
    widths = arch.layer_widths
    outs = np.empty((stack.shape[0], x.shape[0], widths[-1]))
    for k in range(stack.shape[0]):
        vec = stack[k]
        h = x
        offset = 0
        last = len(widths) - 2
        for layer, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = vec[offset : offset + w_in * w_out].reshape(w_in, w_out)
            offset += w_in * w_out
            b = vec[offset : offset + w_out]
            offset += w_out
            h = h @ w + b
            if layer != last:
                h = act(h)
        outs[k] = h
    return outs[0] if single else outs


@dataclass
class VariationalPosterior:
    """Mean-field Gaussian or a fixed-weight mixture of mean-fields.

    Component probabilities are fixed (never trained); training mutates the
    location and raw-scale arrays in place, so the posterior is single-owner.
    """

    kind: str  # "mean-field" | "mixture"
    locs: np.ndarray  # (K, d)
    raw_scales: np.ndarray  # (K, d)
    component_probs: np.ndarray  # (K,)

    def __post_init__(self):
        self.locs = np.asarray(self.locs, dtype=np.float64)
        self.raw_scales = np.asarray(self.raw_scales, dtype=np.float64)
        self.component_probs = np.asarray(self.component_probs, dtype=np.float64)
        if self.kind not in ("mean-field", "mixture"):
            raise ValueError(f"unknown posterior kind {self.kind!r}")
        if self.locs.ndim != 2 or self.locs.shape != self.raw_scales.shape:
            raise ValueError("locs and raw_scales must be matching (K, d) arrays")
        k = self.locs.shape[0]
        if self.component_probs.shape != (k,):
            raise ValueError("component_probs length must match component count")
        if abs(self.component_probs.sum() - 1.0) > 1e-12:
            raise ValueError("component probabilities must sum to 1")
        if self.kind == "mean-field" and k != 1:
            raise ValueError("mean-field posterior has exactly one component")

    @property
    def n_components(self) -> int:
        return self.locs.shape[0]

    @property
    def dim(self) -> int:
        return self.locs.shape[1]

    @property
    def components(self) -> list:
        return [MeanFieldGaussian(self.locs[k], self.raw_scales[k]) for k in range(self.n_components)]

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([self.locs[k], self.raw_scales[k]]) for k in range(self.n_components)]
        )

    def unflatten(self, vec: np.ndarray) -> None:
        d = self.dim
        for k in range(self.n_components):
            base = k * 2 * d
            self.locs[k] = vec[base : base + d]
            self.raw_scales[k] = vec[base + d : base + 2 * d]


@dataclass
class PosteriorSample:
    """Reparameterized draws plus the nodes training differentiates against."""

    theta: ad.Node  # (m, d)
    log_q_minus_log_r: ad.Node  # (m,)
    param_nodes: list  # [loc_0, raw_0, loc_1, raw_1, ...]


def _mean_field_logprob_node(theta: ad.Node, loc: ad.Node, raw: ad.Node) -> ad.Node:
    z = (theta - loc) * ad.exp(-raw)
    per_coord = -0.5 * _LOG_2PI - raw - 0.5 * z**2
    return ad.sum_(per_coord, axis=1)


def _draw_eps(post: VariationalPosterior, rng: np.random.Generator, m: int) -> list:
    """One standard-normal block per component; shared by both sample paths."""
    k = post.n_components
    if m % k != 0:
        raise ValueError(f"stratified sampling needs m divisible by {k}, got m={m}")
    return [rng.standard_normal((m // k, post.dim)) for _ in range(k)]


def posterior_sample(
    post: VariationalPosterior,
    rng: np.random.Generator,
    m: int,
    prior: MeanFieldGaussian | None = None,
) -> PosteriorSample:
    """Reparameterized sample matrix with per-row log q(theta) - log r(theta).

    Mixtures are sampled stratified (m/K rows per component, fixed component
    probabilities) and each row's log q is evaluated under the full mixture.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    eps_blocks = _draw_eps(post, rng, m)
    loc_nodes = [ad.Node(post.locs[k], op="loc") for k in range(post.n_components)]
    raw_nodes = [ad.Node(post.raw_scales[k], op="raw_scale") for k in range(post.n_components)]

    rows = [
        loc_nodes[k] + ad.exp(raw_nodes[k]) * ad.Node(eps_blocks[k], op="eps")
        for k in range(post.n_components)
    ]
    theta = rows[0] if post.n_components == 1 else ad.concat(rows, axis=0)

    if post.n_components == 1:
        log_q = _mean_field_logprob_node(theta, loc_nodes[0], raw_nodes[0])
    else:
        per_comp = [
            _mean_field_logprob_node(theta, loc_nodes[k], raw_nodes[k])
            + float(np.log(post.component_probs[k]))
            for k in range(post.n_components)
        ]
        log_q = ad.logsumexp(ad.stack_rows(per_comp), axis=0)

    if prior is None:
        prior = MeanFieldGaussian(np.zeros(post.dim), np.zeros(post.dim))
    log_r = _mean_field_logprob_node(
        theta, ad.as_node(prior.locs), ad.as_node(prior.raw_scales)
    )

    param_nodes = []
    for k in range(post.n_components):
        param_nodes.extend([loc_nodes[k], raw_nodes[k]])
    return PosteriorSample(theta=theta, log_q_minus_log_r=log_q - log_r, param_nodes=param_nodes)


def posterior_sample_np(post: VariationalPosterior, rng: np.random.Generator, m: int) -> np.ndarray:
    """Numpy-only draws with the same stream consumption as posterior_sample."""
    if m < 1:
        raise ValueError("m must be >= 1")
    eps_blocks = _draw_eps(post, rng, m)
    rows = [
        post.locs[k] + np.exp(post.raw_scales[k]) * eps_blocks[k]
        for k in range(post.n_components)
    ]
    return rows[0] if post.n_components == 1 else np.concatenate(rows, axis=0)


@dataclass
class OptimizerState:
    """Adam or adagrad with a continuous-exponent exponential lr schedule."""

    kind: str
    lr0: float
    decay_rate: float = 1.0
    decay_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("adam", "adagrad"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.decay_steps < 1:
            raise ValueError("decay_steps must be >= 1")

    def learning_rate(self) -> float:
        return float(self.lr0 * self.decay_rate ** (self.step / self.decay_steps))


def optimizer_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One update; mutates the accumulator state and returns new parameters."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    if np.isnan(grads).any():
        raise ad.GradientNaNError(
            f"NaN gradient at optimizer step {state.step} "
            f"(coordinates {np.flatnonzero(np.isnan(grads))[:5].tolist()})"
        )
    lr = state.learning_rate()
    if state.kind == "adam":
        if state.m is None:
            state.m = np.zeros_like(params)
            state.v = np.zeros_like(params)
        t = state.step + 1
        state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
        state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
        m_hat = state.m / (1.0 - state.beta1**t)
        v_hat = state.v / (1.0 - state.beta2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + state.eps)
    else:
        if state.v is None:
            state.v = np.zeros_like(params)
        state.v = state.v + grads**2
        update = lr * grads / (np.sqrt(state.v) + state.eps)
    state.step += 1
    return params - update


def init_params(
    arch: MlpArch,
    rng: np.random.Generator,
    scheme: str = "mean-field",
    components: int = 2,
) -> tuple[VariationalPosterior, MeanFieldGaussian]:
    """Posterior at the standard-normal prior; the prior itself is immutable.

    Mean-field init is exact (locs 0, scales 1, so the KL to the prior is 0).
    Mixture components get a +-0.1 uniform jitter on their locations from the
    seeded stream so they can separate during training.
    """
    d = arch.param_count()
    prior = MeanFieldGaussian(np.zeros(d), np.zeros(d))
    if scheme == "mean-field":
        post = VariationalPosterior(
            kind="mean-field",
            locs=np.zeros((1, d)),
            raw_scales=np.zeros((1, d)),
            component_probs=np.ones(1),
        )
    elif scheme == "mixture":
        if components < 1:
            raise ValueError("components must be >= 1")
        locs = rng.uniform(-0.1, 0.1, size=(components, d))
        post = VariationalPosterior(
            kind="mixture",
            locs=locs,
            raw_scales=np.zeros((components, d)),
            component_probs=np.full(components, 1.0 / components),
        )
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return post, prior
