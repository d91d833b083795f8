"""Toy-scale contrastive training runs with per-epoch information metrics.

A run trains an MLP encoder and projection head on Gaussian class blobs with
noise/masking augmentations, and after every epoch logs the objective, the
matrix information terms on a fixed metric batch, the two bound estimates and
the held-out accuracy of online linear probes on encoder and projector
features.
"""

from __future__ import annotations

import dataclasses
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import matrix_info
from .tensor_core import NonFiniteError
from .nn_engine import (
    ContrastiveNet,
    LayerParams,
    ProjectorSpec,
    barlow_loss,
    bottleneck_regularized_loss,
    infonce_loss,
    init_layer,
    supervised_head_loss,
)

log = logging.getLogger(__name__)

OBJECTIVES = ("infonce", "barlow", "supervised")
SWEEP_AXES = ("lambda", "fsq_levels", "topk_k")

RUNLOG_COLUMNS = (
    "epoch",
    "objective_loss",
    "regularizer_value",
    "encoder_feature_loss",
    "i2_z1_z2",
    "h2_z1",
    "lower_bound_est",
    "upper_bound_est",
    "probe_acc_z1",
    "probe_acc_z2",
)


class HarnessError(ValueError):
    pass


class BadParams(HarnessError):
    pass


class SingleClass(HarnessError):
    pass


class TooFewRuns(HarnessError):
    pass


class DivergedLoss(RuntimeError):
    """Raised when a training loss becomes non-finite; ``log`` holds the epochs completed so far."""

    def __init__(self, message: str, log: "RunLog"):
        super().__init__(message)
        self.log = log


# ------------------------------------------------------------------- data


@dataclass
class SyntheticDataset:
    points: np.ndarray
    labels: np.ndarray
    class_count: int
    spread: float
    seed: int
    means: np.ndarray

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic 3:1 train / held-out index split, stratified by class."""
        held = heldout_mask(self.labels)
        idx = np.arange(len(self.labels))
        return idx[~held], idx[held]


def heldout_mask(labels) -> np.ndarray:
    """Marks every fourth occurrence of each class (the 4th, 8th, ...) as held out."""
    labels = np.asarray(labels)
    held = np.zeros(labels.shape, dtype=bool)
    for c in np.unique(labels):
        pos = np.flatnonzero(labels == c)
        held[pos[3::4]] = True
    return held


def gen_synthetic(classes: int, dim: int, n: int, spread: float, seed: int) -> SyntheticDataset:
    """Gaussian blobs around the vertices of a randomly rotated regular simplex.

    Means are pairwise ``max(6 * spread, 1)`` apart; labels cycle through the
    classes so counts are balanced within one.
    """
    if classes < 2 or n < classes or dim < classes or spread < 0:
        raise BadParams("need classes >= 2, n >= classes, dim >= classes and spread >= 0")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, classes)))
    vertices = np.eye(classes) - 1.0 / classes
    separation = max(6.0 * spread, 1.0)
    means = (vertices @ basis.T) * (separation / math.sqrt(2.0))
    labels = rng.permutation(np.arange(n) % classes)
    points = means[labels] + spread * rng.normal(size=(n, dim))
    return SyntheticDataset(points, labels, classes, float(spread), int(seed), means)


@dataclass(frozen=True)
class AugmentPolicy:
    noise_sigma: float = 0.5
    mask_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise BadParams("noise_sigma must be >= 0")
        if not 0.0 <= self.mask_prob < 1.0:
            raise BadParams("mask_prob must lie in [0, 1)")


def _draw_rng(policy: AugmentPolicy, sample_id: int, draw_index: int) -> np.random.Generator:
    mask = 2**64 - 1
    counter = np.array([int(sample_id) & mask, int(draw_index) & mask, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(policy.seed) & mask, counter=counter))


def augment(x, policy: AugmentPolicy, draw_index: int, sample_id: int = 0) -> np.ndarray:
    """One augmented view: Gaussian noise, then independent coordinate masking.

    The result depends only on ``(policy.seed, sample_id, draw_index)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if policy.noise_sigma == 0 and policy.mask_prob == 0:
        return x.copy()
    rng = _draw_rng(policy, sample_id, draw_index)
    out = x + policy.noise_sigma * rng.normal(size=x.shape)
    if policy.mask_prob > 0:
        out = out * (rng.random(size=x.shape) >= policy.mask_prob)
    return out


def augment_batch(points: np.ndarray, ids, policy: AugmentPolicy, draw_index: int) -> np.ndarray:
    return np.stack([augment(points[i], policy, draw_index, sample_id=i) for i in ids])


# ----------------------------------------------------------------- probes


def _standardize(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return [(a - mu) / sd for a in (train, *others)]


class SoftmaxProbe:
    """Multinomial logistic regression trained by full-batch gradient descent."""

    def __init__(self, dim: int, classes: int):
        self.w = np.zeros((dim, classes))
        self.b = np.zeros(classes)

    def logits(self, x):
        return x @ self.w + self.b

    def fit(self, x, y, steps: int, lr: float):
        n, classes = len(y), self.w.shape[1]
        onehot = np.zeros((n, classes))
        onehot[np.arange(n), y] = 1.0
        for _ in range(steps):
            logits = self.logits(x)
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            g = (p - onehot) / n
            self.w -= lr * (x.T @ g)
            self.b -= lr * g.sum(axis=0)
        return self

    def accuracy(self, x, y) -> float:
        return float(np.mean(np.argmax(self.logits(x), axis=1) == y))

    def cross_entropy(self, x, y) -> float:
        logits = self.logits(x)
        m = logits.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
        return float(np.mean(lse - logits[np.arange(len(y)), y]))


@dataclass
class ProbeResult:
    train_accuracy: float
    heldout_accuracy: float

    @property
    def accuracy(self) -> float:
        return self.heldout_accuracy


def linear_probe(features, labels, steps: int = 300, lr: float = 0.5) -> ProbeResult:
    """Fit a softmax probe from zero on 3/4 of each class, score the held-out rest."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClass("linear probe needs at least two classes")
    te = heldout_mask(y)
    tr = ~te
    xtr, xte = _standardize(x[tr], x[te])
    probe = SoftmaxProbe(x.shape[1], int(y.max()) + 1).fit(xtr, y[tr], steps, lr)
    return ProbeResult(probe.accuracy(xtr, y[tr]), probe.accuracy(xte, y[te]))


# ----------------------------------------------------------------- config


@dataclass
class DataConfig:
    classes: int = 4
    dim: int = 20
    n: int = 2048
    spread: float = 1.0
    seed: int = 7


@dataclass
class TrainConfig:
    objective: str = "infonce"
    projector: ProjectorSpec = field(default_factory=ProjectorSpec)
    encoder_hidden: tuple[int, ...] = (64,)
    feature_dim: int = 16
    epochs: int = 25
    steps_per_epoch: int | None = 8
    batch_size: int = 128
    lr: float = 0.5
    weight_decay: float = 1e-4
    temperature: float = 0.2
    gamma: float = 5e-3
    noise_sigma: float = 0.5
    mask_prob: float = 0.0
    metric_batch: int = 256
    probe_steps: int = 50
    probe_lr: float = 0.5
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if isinstance(self.projector, dict):
            self.projector = ProjectorSpec(**self.projector)
        if isinstance(self.data, dict):
            self.data = DataConfig(**self.data)
        self.encoder_hidden = tuple(int(w) for w in self.encoder_hidden)
        if self.objective not in OBJECTIVES:
            raise BadParams(f"objective must be one of {OBJECTIVES}")
        if self.batch_size < 4:
            raise BadParams("batch size must be >= 4")
        if self.epochs < 0 or (self.steps_per_epoch is not None and self.steps_per_epoch < 1):
            raise BadParams("epochs must be >= 0 and steps_per_epoch >= 1")
        positives = dict(
            feature_dim=self.feature_dim,
            lr=self.lr,
            temperature=self.temperature,
            metric_batch=self.metric_batch,
        )
        for name, v in positives.items():
            if not v > 0:
                raise BadParams(f"{name} must be positive")
        if any(w < 1 for w in self.encoder_hidden):
            raise BadParams("encoder widths must be positive")
        if self.weight_decay < 0 or self.gamma < 0 or self.probe_steps < 0:
            raise BadParams("weight_decay, gamma and probe_steps must be >= 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = {k: v for k, v in d.items() if not k.startswith("_")}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise BadParams(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def with_projector(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, projector=dataclasses.replace(self.projector, **changes))


# ----------------------------------------------------------------- runlog


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict):
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise HarnessError("epochs must increase")
        self.rows.append({c: row[c] for c in RUNLOG_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    @property
    def final(self) -> dict | None:
        return self.rows[-1] if self.rows else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(RUNLOG_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(format_row(r) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RunLog":
        lines = text.strip("\n").split("\n")
        if lines[0] != ",".join(RUNLOG_COLUMNS):
            raise HarnessError("unexpected runlog header")
        log_ = cls()
        for line in lines[1:]:
            vals = line.split(",")
            row = {c: float(v) for c, v in zip(RUNLOG_COLUMNS, vals)}
            row["epoch"] = int(row["epoch"])
            log_.append(row)
        return log_


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def format_row(row: dict, columns=RUNLOG_COLUMNS) -> str:
    return ",".join(format_value(row[c]) for c in columns)


# ------------------------------------------------------------------ train


def _objective_fns(config: TrainConfig, head: LayerParams | None, labels_ref: list):
    if config.objective == "infonce":
        fn = lambda a, b: infonce_loss(a, b, config.temperature)  # noqa: E731
        return fn, fn
    if config.objective == "barlow":
        fn = lambda a, b: barlow_loss(a, b, config.gamma, on_constant="mask")  # noqa: E731
        return fn, fn

    def supervised(a, b):
        y = labels_ref[0]
        return (supervised_head_loss(a, y, head) + supervised_head_loss(b, y, head)) * 0.5

    # the I(Z1;R) surrogate stays contrastive for supervised runs
    return supervised, lambda a, b: infonce_loss(a, b, config.temperature)


def _sgd_step(params, lr: float, weight_decay: float):
    for p in params:
        if p.grad is None:
            continue
        if weight_decay:
            p.data = p.data - lr * p.grad - lr * weight_decay * p.data
        else:
            p.data = p.data - lr * p.grad


def build_model(config: TrainConfig, in_dim: int, rng: np.random.Generator):
    widths = [in_dim, *config.encoder_hidden, config.feature_dim]
    net = ContrastiveNet(widths, config.projector, config.objective, rng)
    head = None
    if config.objective == "supervised":
        head = init_layer(rng, net.z2_dim, config.data.classes)
    return net, head


def _seed_streams(seed: int):
    ss = np.random.SeedSequence(int(seed))
    init, order, aug, metric = ss.spawn(4)
    aug_seed = int(aug.generate_state(1, dtype=np.uint64)[0])
    return np.random.default_rng(init), np.random.default_rng(order), aug_seed, np.random.default_rng(metric)


def train(config: TrainConfig, data: SyntheticDataset | None = None, *, batch_callback=None) -> RunLog:
    """Train one model and return its per-epoch log.

    Args:
        config: run configuration; the master ``config.seed`` fixes every
            random choice, so equal configs give bit-identical logs.
        data: dataset to use; generated from ``config.data`` when omitted.
        batch_callback: optional ``f(step, info)`` called after each training
            batch with the FSQ codes / SAE latents of both views.

    Raises:
        DivergedLoss: if the training loss turns non-finite.
    """
    if data is None:
        d = config.data
        data = gen_synthetic(d.classes, d.dim, d.n, d.spread, d.seed)
    train_idx, test_idx = data.split()
    if len(train_idx) < config.batch_size:
        raise BadParams("batch size exceeds training split")
    init_rng, order_rng, aug_seed, metric_rng = _seed_streams(config.seed)
    policy = AugmentPolicy(config.noise_sigma, config.mask_prob, aug_seed)
    net, head = build_model(config, data.points.shape[1], init_rng)
    params = net.parameters() + (head.parameters() if head is not None else [])
    labels_ref: list = [None]
    objective_fn, encoder_fn = _objective_fns(config, head, labels_ref)
    lam = config.projector.bottleneck_lambda

    m = min(config.metric_batch, len(train_idx))
    metric_ids = np.sort(metric_rng.choice(train_idx, size=m, replace=False))
    # metric views use draw indices disjoint from the training draws
    metric_va = augment_batch(data.points, metric_ids, policy, -1)
    metric_vb = augment_batch(data.points, metric_ids, policy, -2)

    steps_per_epoch = config.steps_per_epoch or max(1, len(train_idx) // config.batch_size)
    probe1 = probe2 = None
    runlog = RunLog()
    step = 0
    for epoch in range(1, config.epochs + 1):
        obj_sum = reg_sum = 0.0
        for _ in range(steps_per_epoch):
            ids = order_rng.choice(train_idx, size=config.batch_size, replace=False)
            labels_ref[0] = data.labels[ids]
            xa = augment_batch(data.points, ids, policy, 2 * step)
            xb = augment_batch(data.points, ids, policy, 2 * step + 1)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    z1a, z1b = net.encode(xa), net.encode(xb)
                    pa, pb = net.project(z1a), net.project(z1b)
                    bundle = bottleneck_regularized_loss(
                        [z1a, z1b], [pa.z2, pb.z2], objective_fn, lam, encoder_fn
                    )
            except NonFiniteError:
                bundle = None
            if bundle is None or not math.isfinite(bundle.total):
                raise DivergedLoss(f"non-finite loss at step {step}", runlog)
            for p in params:
                p.zero_grad()
            with np.errstate(over="ignore", invalid="ignore"):
                bundle.total_tensor.backward()
                _sgd_step(params, config.lr, config.weight_decay)
            if batch_callback is not None:
                batch_callback(step, {"a": pa, "b": pb, "bundle": bundle})
            obj_sum += bundle.objective
            reg_sum += bundle.regularizer
            step += 1

        probes = [probe1, probe2]
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                row = _epoch_metrics(
                    net, data, train_idx, test_idx, metric_ids, metric_va, metric_vb, encoder_fn, config, probes
                )
        except NonFiniteError:
            raise DivergedLoss(f"non-finite features at epoch {epoch}", runlog) from None
        probe1, probe2 = probes
        row.update(epoch=epoch, objective_loss=obj_sum / steps_per_epoch, regularizer_value=reg_sum / steps_per_epoch)
        if not all(math.isfinite(float(row[c])) for c in RUNLOG_COLUMNS):
            raise DivergedLoss(f"non-finite metric at epoch {epoch}", runlog)
        runlog.append(row)
        log.debug("epoch %d: %s", epoch, format_row(runlog.final))
    return runlog


def _features(net: ContrastiveNet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z1 = net.encode(x)
    return z1.data, net.project(z1.detach()).z2.data


def _epoch_metrics(net, data, train_idx, test_idx, metric_ids, va, vb, encoder_fn, config, probes) -> dict:
    z1m, z2m = _features(net, data.points[metric_ids])
    enc_loss = float(encoder_fn(net.encode(va).detach(), net.encode(vb).detach()).data)
    lower = matrix_info.estimate_lower_bound(z1m, z2m, enc_loss)
    h2 = matrix_info.matrix_entropy(matrix_info.feature_kernel(z1m))

    z1tr, z2tr = _features(net, data.points[train_idx])
    z1te, z2te = _features(net, data.points[test_idx])
    ytr, yte = data.labels[train_idx], data.labels[test_idx]
    accs, ces = [], []
    for slot, (ftr, fte) in enumerate(((z1tr, z1te), (z2tr, z2te))):
        ftr, fte = _standardize(ftr, fte)
        if probes[slot] is None:
            probes[slot] = SoftmaxProbe(ftr.shape[1], data.class_count)
        probes[slot].fit(ftr, ytr, config.probe_steps, config.probe_lr)
        accs.append(probes[slot].accuracy(fte, yte))
        ces.append(probes[slot].cross_entropy(fte, yte))
    upper = matrix_info.estimate_upper_bound(z1m, z2m, -ces[1])
    return {
        "encoder_feature_loss": enc_loss,
        "i2_z1_z2": lower.terms["i_z1_z2"],
        "h2_z1": h2,
        "lower_bound_est": lower.value,
        "upper_bound_est": upper.value,
        "probe_acc_z1": accs[0],
        "probe_acc_z2": accs[1],
    }


# ------------------------------------------------------------------ sweep


def apply_axis(base: TrainConfig, axis: str, value) -> TrainConfig:
    """Config with one projector knob set to ``value``."""
    spec = base.projector
    if axis == "lambda":
        return base.with_projector(bottleneck_lambda=float(value))
    if axis == "fsq_levels":
        kind = "fsq" if spec.kind == "mlp" else spec.kind
        return base.with_projector(kind=kind, levels=int(value))
    if axis == "topk_k":
        if spec.kind == "topk_sae":
            return base.with_projector(k=int(value))
        return base.with_projector(kind="topk_sae", hidden=max(64, int(value)), k=int(value), levels=None)
    raise BadParams(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def replicate_seed(master_seed: int, replicate: int) -> int:
    """Seed of replicate ``replicate``; shared by every value of a sweep."""
    return int(np.random.SeedSequence([int(master_seed), int(replicate)]).generate_state(1)[0])


@dataclass
class SweepRow:
    axis_value: float
    replicate: int
    seed: int
    final: dict


def _sweep_job(args) -> SweepRow:
    config, value, rep, seed = args
    log_ = train(dataclasses.replace(config, seed=seed))
    return SweepRow(value, rep, seed, log_.final)


def sweep(base: TrainConfig, axis: str, values, replicates: int = 1, workers: int = 1) -> list[SweepRow]:
    """Train once per (value, replicate); rows come back sorted by value then replicate.

    With ``replicates == 1`` the single run uses ``base.seed`` unchanged, so a
    one-value sweep equals :func:`train`.
    """
    values = list(values)
    if not values:
        raise BadParams("sweep needs at least one value")
    jobs = []
    for v in values:
        cfg = apply_axis(base, axis, v)
        for rep in range(replicates):
            seed = base.seed if replicates == 1 else replicate_seed(base.seed, rep)
            jobs.append((cfg, v, rep, seed))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    return sorted(rows, key=lambda r: (float(r.axis_value), r.replicate))


def spearman(x, y) -> float:
    """Spearman rank correlation with midranks for ties."""
    rho = stats.spearmanr(np.asarray(x, dtype=float), np.asarray(y, dtype=float)).statistic
    return float(rho)


def correlation_report(runs) -> dict[str, float]:
    """Rank correlations of the bound estimates and I(Z1;Z2) with encoder probe accuracy."""
    rows = [r.final if isinstance(r, SweepRow) else r for r in runs]
    if len(rows) < 3:
        raise TooFewRuns("correlation report needs at least three runs")
    acc = [r["probe_acc_z1"] for r in rows]
    return {
        "spearman_lower_bound_vs_acc": spearman([r["lower_bound_est"] for r in rows], acc),
        "spearman_upper_bound_vs_acc": spearman([r["upper_bound_est"] for r in rows], acc),
        "spearman_i2_z1_z2_vs_acc": spearman([r["i2_z1_z2"] for r in rows], acc),
    }
