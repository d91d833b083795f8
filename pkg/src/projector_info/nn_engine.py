"""A small reverse-mode autodiff engine over numpy arrays, plus the contrastive
objectives and projection heads built on it.

Every operation returns a :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them; ``Tensor.backward``
walks that graph in reverse topological order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import matrix_info


class EngineError(ValueError):
    pass


class ShapeMismatch(EngineError):
    pass


class BatchTooSmall(EngineError):
    pass


class ZeroVariance(EngineError):
    pass


class KOutOfRange(EngineError):
    pass


class LabelOutOfRange(EngineError):
    pass


class InvalidProjector(EngineError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise EngineError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op) -> Tensor:
    out = Tensor(data, _parents=parents, op=op)
    if out.requires_grad:
        out._backward = backward
    return out


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward, "add")


def neg(a) -> Tensor:
    return _node(-a.data, (a,), lambda g: a._accum(-g), "neg")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        a._accum(_unbroadcast(g / b.data, a.shape))
        b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), backward, "div")


def power(a, p: float) -> Tensor:
    def backward(g):
        a._accum(g * p * a.data ** (p - 1))

    return _node(a.data**p, (a,), backward, f"pow{p}")


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    return _node(a.data.T, (a,), lambda g: a._accum(g.T), "transpose")


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def relu(a) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: a._accum(g * mask), "relu")


def tanh(a) -> Tensor:
    t = np.tanh(a.data)
    return _node(t, (a,), lambda g: a._accum(g * (1.0 - t * t)), "tanh")


def exp(a) -> Tensor:
    e = np.exp(a.data)
    return _node(e, (a,), lambda g: a._accum(g * e), "exp")


def log(a) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: a._accum(g / a.data), "log")


def logsumexp(a, axis: int = -1) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)
    s = np.sum(np.exp(a.data - m), axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def backward(g):
        soft = np.exp(a.data - np.expand_dims(out, axis))
        a._accum(np.expand_dims(g, axis) * soft)

    return _node(out, (a,), backward, "logsumexp")


def normalize_rows(a) -> Tensor:
    """L2-normalise rows. All-zero rows map to zero and pass no gradient."""
    z_hat, norms = matrix_info.normalize_features(a.data)

    def backward(g):
        a._accum(matrix_info.backprop_normalize(g, z_hat, norms))

    return _node(z_hat, (a,), backward, "normalize_rows")


# ---------------------------------------------------------------- layers


@dataclass
class LayerParams:
    """Affine layer ``x @ weight + bias``; weight is (in, out)."""

    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        x = _wrap(x)
        if x.data.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ShapeMismatch(f"layer expects {self.weight.shape[0]} inputs, got {x.shape}")
        return x @ self.weight + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def init_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> LayerParams:
    bound = 1.0 / math.sqrt(fan_in)
    return LayerParams(
        weight=parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out))),
        bias=parameter(rng.uniform(-bound, bound, size=fan_out)),
    )


ACTIVATIONS: dict[str | None, Callable[[Tensor], Tensor]] = {
    None: lambda t: t,
    "identity": lambda t: t,
    "relu": relu,
    "tanh": tanh,
}


def mlp_forward(x, layers: Sequence[LayerParams], activations: Sequence[str | None]) -> Tensor:
    """Apply ``layers`` in order, each followed by its named activation."""
    if len(activations) != len(layers):
        raise ShapeMismatch("need one activation entry per layer")
    h = _wrap(x)
    for layer, act in zip(layers, activations):
        if act not in ACTIVATIONS:
            raise EngineError(f"unknown activation {act!r}")
        h = ACTIVATIONS[act](layer(h))
    return h


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    def __call__(self, x: Tensor) -> Tensor:
        # training-mode statistics only; there are no running averages
        mu = mean(x, axis=0, keepdims=True)
        xc = x - mu
        var = mean(xc * xc, axis=0, keepdims=True)
        return xc / power(var + self.eps, 0.5) * self.gamma + self.beta

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def init_batchnorm(width: int) -> BatchNormParams:
    return BatchNormParams(parameter(np.ones(width)), parameter(np.zeros(width)))


# ------------------------------------------------------- quantise / sparsify


def fsq_half_width(levels: int) -> int:
    return levels // 2


def fsq_level_count(levels: int) -> int:
    """Number of distinct values ``round(floor(L/2) tanh(z))`` can take."""
    return 2 * (levels // 2) + 1


def fsq_project(v, levels: int) -> Tensor:
    """Finite scalar quantisation ``floor(floor(L/2) tanh(v) + 1/2)``.

    The backward pass treats the rounding as identity (straight-through), so
    the gradient is that of ``floor(L/2) tanh(v)``.
    """
    if levels < 1:
        raise InvalidProjector("FSQ needs at least one level")
    v = _wrap(v)
    half = fsq_half_width(levels)
    t = np.tanh(v.data)
    codes = np.floor(half * t + 0.5)

    def backward(g):
        v._accum(g * half * (1.0 - t * t))

    return _node(codes, (v,), backward, "fsq")


def topk_mask(values: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries per row (ties: lowest index)."""
    v = np.atleast_2d(values)
    width = v.shape[1]
    if not 1 <= k <= width:
        raise KOutOfRange(f"k={k} outside [1, {width}]")
    keep = np.argsort(-v, axis=1, kind="stable")[:, :k]
    mask = np.zeros(v.shape, dtype=bool)
    np.put_along_axis(mask, keep, True, axis=1)
    return mask.reshape(np.shape(values))


def topk_activate(v, k: int) -> Tensor:
    """Zero all but the ``k`` largest entries of each row."""
    v = _wrap(v)
    mask = topk_mask(v.data, k)
    return _node(np.where(mask, v.data, 0.0), (v,), lambda g: v._accum(g * mask), "topk")


@dataclass
class SaeParams:
    w_enc: Tensor  # (d, hidden)
    b_pre: Tensor  # (d,)
    w_dec: Tensor  # (hidden, d)

    def parameters(self) -> list[Tensor]:
        return [self.w_enc, self.b_pre, self.w_dec]


def init_sae(rng: np.random.Generator, dim: int, hidden: int) -> SaeParams:
    w_enc = rng.uniform(-1.0, 1.0, size=(dim, hidden)) / math.sqrt(dim)
    # decoder starts as the encoder transpose, a common top-k SAE initialisation
    return SaeParams(parameter(w_enc), parameter(np.zeros(dim)), parameter(w_enc.T.copy()))


def sae_project(x, params: SaeParams, k: int) -> tuple[Tensor, Tensor]:
    """Top-k sparse autoencoder: returns ``(z2, h)``.

    ``h = TopK((x - b_pre) W_enc)`` and ``z2 = h W_dec + b_pre``.
    """
    x = _wrap(x)
    if x.shape[1] != params.w_enc.shape[0] or params.w_dec.shape != params.w_enc.shape[::-1]:
        raise ShapeMismatch("SAE dimensions do not chain")
    h = topk_activate((x - params.b_pre) @ params.w_enc, k)
    return h @ params.w_dec + params.b_pre, h


# ----------------------------------------------------------------- losses


def _check_pair(a: Tensor, b: Tensor):
    if a.shape != b.shape or a.data.ndim != 2:
        raise ShapeMismatch(f"view shapes differ: {a.shape} vs {b.shape}")


def infonce_loss(anchor, positive, temperature: float = 0.2) -> Tensor:
    """Symmetrised InfoNCE with in-batch negatives.

    Row ``i`` of each view is scored against every row of the other view by
    cosine similarity over ``temperature``; the matching row is the positive.
    """
    a, b = _wrap(anchor), _wrap(positive)
    _check_pair(a, b)
    n = a.shape[0]
    if n < 2:
        raise BatchTooSmall("InfoNCE needs at least two samples")
    logits = normalize_rows(a) @ normalize_rows(b).T * (1.0 / temperature)
    pos = sum_(logits * np.eye(n), axis=1)
    a_to_b = mean(logsumexp(logits, axis=1) - pos)
    b_to_a = mean(logsumexp(logits, axis=0) - pos)
    return (a_to_b + b_to_a) * 0.5


def barlow_loss(za, zb, gamma: float = 5e-3, *, on_constant: str = "raise") -> Tensor:
    """Barlow Twins redundancy-reduction loss.

    ``C[i, j]`` is the batch cross-correlation of centred feature ``i`` of view A
    with centred feature ``j`` of view B (equivalently, features standardised
    with the biased 1/n variance).

    A feature constant over the batch has no correlation. By default that raises
    ``ZeroVariance``; with ``on_constant="mask"`` its row and column of ``C`` are
    zero instead (so it costs 1 on the diagonal and passes no gradient), which
    quantised heads need when a code dimension collapses within a batch.
    """
    if on_constant not in ("raise", "mask"):
        raise ValueError("on_constant must be 'raise' or 'mask'")
    a, b = _wrap(za), _wrap(zb)
    _check_pair(a, b)
    if a.shape[0] < 2:
        raise BatchTooSmall("Barlow Twins needs at least two samples")
    ac = a - mean(a, axis=0, keepdims=True)
    bc = b - mean(b, axis=0, keepdims=True)
    norms = []
    for name, raw, t in (("A", a, ac), ("B", b, bc)):
        spread = np.sqrt(np.sum(t.data * t.data, axis=0))
        scale = np.maximum(np.max(np.abs(raw.data), axis=0), 1.0)
        const = spread <= 1e-12 * scale
        if np.any(const) and on_constant == "raise":
            raise ZeroVariance(f"view {name} has a feature that is constant over the batch")
        if np.any(const):
            keep = (~const).astype(np.float64)
            t = t * keep
            norms.append((t, power(sum_(t * t, axis=0) + const.astype(np.float64), 0.5)))
        else:
            norms.append((t, power(sum_(t * t, axis=0), 0.5)))
    (ac, na), (bc, nb) = norms
    c = (ac.T @ bc) / _outer(na, nb)
    d = c.shape[0]
    eye = np.eye(d)
    on = sum_(power(1.0 - c * eye, 2.0) * eye)
    off = sum_(power(c * (1.0 - eye), 2.0))
    return on + off * gamma


def _outer(u: Tensor, v: Tensor) -> Tensor:
    return reshape(u, (-1, 1)) @ reshape(v, (1, -1))


def reshape(a, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)), "reshape")


def cross_entropy(logits, labels) -> Tensor:
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch("need one label per row")
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return mean(logsumexp(logits, axis=1) - sum_(logits * onehot, axis=1))


def supervised_head_loss(z2, labels, head: LayerParams) -> Tensor:
    """Mean cross-entropy of a linear classifier on projector features."""
    return cross_entropy(head(z2), labels)


def matrix_mi_reg(z1, z2) -> Tensor:
    """Order-2 matrix MI between row-normalised ``z1`` and ``z2`` kernels."""
    z1, z2 = _wrap(z1), _wrap(z2)
    value, g1, g2 = matrix_info.matrix_mi_alpha2_and_grad(z1.data, z2.data)

    def backward(g):
        z1._accum(g * g1)
        z2._accum(g * g2)

    return _node(np.asarray(value), (z1, z2), backward, "matrix_mi")


@dataclass
class LossBundle:
    objective: float
    regularizer: float
    total: float
    encoder_feature_objective: float
    total_tensor: Tensor = field(repr=False)
    lam: float = 0.0


def _views(z) -> list[Tensor]:
    return [_wrap(t) for t in z] if isinstance(z, (list, tuple)) else [_wrap(z)]


def bottleneck_regularized_loss(
    z1,
    z2,
    objective_fn: Callable[..., Tensor],
    lam: float,
    encoder_fn: Callable[..., Tensor] | None = None,
) -> LossBundle:
    """Objective on projector features plus ``lam`` times the matrix-MI regulariser.

    Args:
        z1, z2: encoder / projector features, either one tensor each or matching
            sequences of views. The regulariser is averaged over views.
        objective_fn: called as ``objective_fn(*z2_views)``.
        lam: regularisation weight (>= 0). With ``lam == 0`` the returned
            ``total_tensor`` is the objective tensor itself.
        encoder_fn: objective re-evaluated on detached encoder features
            (defaults to ``objective_fn``); logged only.
    """
    if lam < 0 or not math.isfinite(lam):
        raise EngineError("regularisation weight must be a finite non-negative number")
    v1, v2 = _views(z1), _views(z2)
    if len(v1) != len(v2):
        raise ShapeMismatch("z1 and z2 need the same number of views")
    for a, b in zip(v1, v2):
        if a.shape[0] != b.shape[0]:
            raise ShapeMismatch("batch sizes differ between encoder and projector features")
    objective = objective_fn(*v2)
    enc_fn = encoder_fn or objective_fn
    enc = float(enc_fn(*[t.detach() for t in v1]).data)
    if lam > 0:
        reg_terms = [matrix_mi_reg(a, b) for a, b in zip(v1, v2)]
        reg = reg_terms[0]
        for r in reg_terms[1:]:
            reg = reg + r
        reg = reg * (1.0 / len(reg_terms))
        total = objective + reg * lam
        reg_value = float(reg.data)
    else:
        total = objective
        reg_value = float(
            np.mean([matrix_info.matrix_mi_alpha2_and_grad(a.data, b.data)[0] for a, b in zip(v1, v2)])
        )
    return LossBundle(
        objective=float(objective.data),
        regularizer=reg_value,
        total=float(total.data),
        encoder_feature_objective=enc,
        total_tensor=total,
        lam=lam,
    )


# -------------------------------------------------------------- projectors

PROJECTOR_KINDS = ("mlp", "fsq", "topk_sae")


@dataclass(frozen=True)
class ProjectorSpec:
    """Projection head selection.

    ``kind`` is ``"mlp"`` (Linear-ReLU-Linear to ``out``), ``"fsq"`` (the same MLP
    followed by quantisation with ``levels``) or ``"topk_sae"`` (a top-k sparse
    autoencoder with ``hidden`` latents). Setting ``levels`` on a ``topk_sae``
    quantises its output too, which is how combined heads are expressed.
    """

    kind: str = "mlp"
    hidden: int = 32
    out: int = 8
    levels: int | None = None
    k: int | None = None
    bottleneck_lambda: float = 0.0
    allow_single_level: bool = False

    def __post_init__(self):
        if self.kind not in PROJECTOR_KINDS:
            raise InvalidProjector(f"unknown projector kind {self.kind!r}")
        if self.hidden < 1 or self.out < 1:
            raise InvalidProjector("projector widths must be positive")
        if self.kind == "fsq" and self.levels is None:
            raise InvalidProjector("fsq projector needs levels")
        if self.levels is not None:
            if self.kind == "mlp":
                raise InvalidProjector("use kind='fsq' for a quantised MLP head")
            if self.levels < 2 and not (self.levels == 1 and self.allow_single_level):
                raise InvalidProjector("FSQ needs levels >= 2 (levels=1 requires allow_single_level)")
        if self.kind == "topk_sae":
            if self.k is None or not 1 <= self.k <= self.hidden:
                raise InvalidProjector(f"top-k SAE needs 1 <= k <= hidden, got k={self.k}")
        if self.bottleneck_lambda < 0 or not math.isfinite(self.bottleneck_lambda):
            raise InvalidProjector("bottleneck_lambda must be finite and >= 0")

    @property
    def effective_levels(self) -> int | None:
        return None if self.levels is None else fsq_level_count(self.levels)


@dataclass
class ProjectorOutput:
    z2: Tensor
    codes: np.ndarray | None = None   # FSQ output values
    hidden: np.ndarray | None = None  # SAE latent activations


class ContrastiveNet:
    """Encoder MLP followed by a projection head.

    Under the Barlow objective the MLP head is Linear-BN-ReLU-Linear and the
    SAE head sits after a Linear-BN-ReLU half projector; otherwise the MLP head
    is Linear-ReLU-Linear and the SAE replaces the head entirely.
    """

    def __init__(self, widths: Sequence[int], projector: ProjectorSpec, objective: str, rng: np.random.Generator):
        widths = list(widths)
        if len(widths) < 2:
            raise ShapeMismatch("encoder needs at least an input and an output width")
        self.widths = widths
        self.spec = projector
        self.objective = objective
        self.encoder = [init_layer(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        d1 = widths[-1]
        self.proj_layers: list[LayerParams] = []
        self.bn: BatchNormParams | None = None
        self.sae: SaeParams | None = None
        barlow = objective == "barlow"
        if projector.kind in ("mlp", "fsq"):
            self.proj_layers = [init_layer(rng, d1, projector.hidden), init_layer(rng, projector.hidden, projector.out)]
            if barlow:
                self.bn = init_batchnorm(projector.hidden)
            self.z2_dim = projector.out
        else:
            sae_dim = d1
            if barlow:
                self.proj_layers = [init_layer(rng, d1, projector.out)]
                self.bn = init_batchnorm(projector.out)
                sae_dim = projector.out
            self.sae = init_sae(rng, sae_dim, projector.hidden)
            self.z2_dim = sae_dim

    def parameters(self) -> list[Tensor]:
        params = [p for layer in self.encoder for p in layer.parameters()]
        params += [p for layer in self.proj_layers for p in layer.parameters()]
        if self.bn is not None:
            params += self.bn.parameters()
        if self.sae is not None:
            params += self.sae.parameters()
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def encode(self, x) -> Tensor:
        acts = ["relu"] * (len(self.encoder) - 1) + [None]
        return mlp_forward(x, self.encoder, acts)

    def project(self, z1: Tensor) -> ProjectorOutput:
        spec = self.spec
        hidden = None
        if spec.kind in ("mlp", "fsq"):
            h = self.proj_layers[0](z1)
            if self.bn is not None:
                h = self.bn(h)
            z2 = self.proj_layers[1](relu(h))
        else:
            x = z1
            if self.proj_layers:
                x = relu(self.bn(self.proj_layers[0](z1)))
            z2, h = sae_project(x, self.sae, spec.k)
            hidden = h.data
        codes = None
        if spec.levels is not None:
            z2 = fsq_project(z2, spec.levels)
            codes = z2.data
        return ProjectorOutput(z2=z2, codes=codes, hidden=hidden)


# ------------------------------------------------------------ gradcheck


def gradcheck(fn: Callable[..., Tensor], *arrays, step: float = 1e-6) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` maps tensors (one per array) to a scalar tensor. For each input the
    error is ``|g_auto - g_fd| / max(|g_auto|, |g_fd|, 1e-8)`` in Frobenius norm.
    """
    params = [parameter(a) for a in arrays]
    fn(*params).backward()
    worst = 0.0
    for i, p in enumerate(params):
        auto = p.grad if p.grad is not None else np.zeros_like(p.data)
        fd = np.zeros_like(p.data)
        for idx in np.ndindex(*p.data.shape):
            vals = []
            for sign in (1.0, -1.0):
                shifted = [a.copy() if j == i else a for j, a in enumerate(arrays)]
                shifted[i] = np.array(shifted[i], dtype=np.float64)
                shifted[i][idx] += sign * step
                vals.append(float(fn(*[Tensor(s) for s in shifted]).data))
            fd[idx] = (vals[0] - vals[1]) / (2.0 * step)
        scale = max(np.linalg.norm(auto), np.linalg.norm(fd), 1e-8)
        worst = max(worst, float(np.linalg.norm(auto - fd) / scale))
    return worst
