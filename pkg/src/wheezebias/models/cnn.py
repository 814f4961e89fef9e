"""Single-convolution CNN on 257 x 59 spectrogram images, in plain numpy.

Layer stack::

    input (H, W, 1)
    conv k x k, F filters, stride 1, valid
    batch norm -> ReLU
    max pool p x p, stride 1
    dropout
    fully connected (fc1)
    dropout
    fully connected (2) -> softmax

Weights live in a flat dict of arrays so they serialize like every other
model. Gradients are derived by hand; :func:`cnn_grad_check` compares
them with central finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .. import dsp
from ..errors import ArchitectureError, ArgumentError, DegenerateDataError
from .base import CNN, TrainedModel, check_binary, register_scorer

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
TRAINABLE = ("conv_w", "conv_b", "bn_gamma", "bn_beta", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
LAYERS = {
    "conv": ("conv_w", "conv_b"),
    "batchnorm": ("bn_gamma", "bn_beta"),
    "fc1": ("fc1_w", "fc1_b"),
    "fc2": ("fc2_w", "fc2_b"),
}


@dataclass(frozen=True)
class CnnArchitecture:
    conv_size: int = 7
    conv_filters: int = 64
    pool_size: int = 2
    fc1_size: int = 10
    dropout_rate: float = 0.5
    input_shape: tuple = (dsp.N_BINS, dsp.N_FRAMES)

    def __post_init__(self):
        h, w = self.input_shape
        if min(self.conv_size, self.conv_filters, self.pool_size, self.fc1_size) < 1:
            raise ArchitectureError("layer sizes must be positive")
        if self.conv_size > min(h, w) or self.pool_size > min(h, w) - self.conv_size + 1:
            raise ArchitectureError(f"kernels too large for input {self.input_shape}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ArchitectureError("dropout_rate must lie in [0, 1)")

    @property
    def conv_shape(self):
        h, w = self.input_shape
        k = self.conv_size
        return (h - k + 1, w - k + 1, self.conv_filters)

    @property
    def pool_shape(self):
        h, w, f = self.conv_shape
        p = self.pool_size
        return (h - p + 1, w - p + 1, f)

    @property
    def flat_size(self) -> int:
        return int(np.prod(self.pool_shape))

    def activation_shapes(self):
        """(layer, activation shape) pairs from input to softmax."""
        return [
            ("input", (*self.input_shape, 1)),
            ("conv", self.conv_shape),
            ("batchnorm", self.conv_shape),
            ("relu", self.conv_shape),
            ("maxpool", self.pool_shape),
            ("dropout", self.pool_shape),
            ("fc1", (1, 1, self.fc1_size)),
            ("dropout", (1, 1, self.fc1_size)),
            ("fc2", (1, 1, 2)),
            ("softmax", (1, 1, 2)),
        ]

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["input_shape"] = tuple(int(v) for v in d.get("input_shape", (dsp.N_BINS, dsp.N_FRAMES)))
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


FD_ARCH = CnnArchitecture(conv_size=7, conv_filters=64, pool_size=2, fc1_size=10)
VD_ARCH = CnnArchitecture(conv_size=5, conv_filters=32, pool_size=4, fc1_size=20)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 15
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.10
    seed: int = 0
    # Ghost batch norm: normalize and backprop in slices of this many
    # samples to bound memory; None processes the whole mini-batch at once.
    micro_batch: int | None = 32
    dtype: str = "float32"

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ArgumentError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ArgumentError("batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ArgumentError("val_fraction must lie in [0, 1)")


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


def init_weights(arch: CnnArchitecture, rng: np.random.Generator, dtype=np.float64) -> dict:
    k, f = arch.conv_size, arch.conv_filters
    d, h = arch.flat_size, arch.fc1_size
    w = {
        "conv_w": rng.normal(0.0, np.sqrt(2.0 / (k * k)), (k, k, f)),
        "conv_b": np.zeros(f),
        "bn_gamma": np.ones(f),
        "bn_beta": np.zeros(f),
        "bn_mean": np.zeros(f),
        "bn_var": np.ones(f),
        "fc1_w": rng.normal(0.0, np.sqrt(2.0 / (d + h)), (d, h)),
        "fc1_b": np.zeros(h),
        # small output layer so the initial loss sits at log 2
        "fc2_w": rng.normal(0.0, 0.01, (h, 2)),
        "fc2_b": np.zeros(2),
    }
    return {name: v.astype(dtype) for name, v in w.items()}


def check_weights(arch: CnnArchitecture, weights: dict):
    k, f = arch.conv_size, arch.conv_filters
    expected = {
        "conv_w": (k, k, f), "conv_b": (f,), "bn_gamma": (f,), "bn_beta": (f,),
        "bn_mean": (f,), "bn_var": (f,), "fc1_w": (arch.flat_size, arch.fc1_size),
        "fc1_b": (arch.fc1_size,), "fc2_w": (arch.fc1_size, 2), "fc2_b": (2,),
    }
    for name, shape in expected.items():
        if name not in weights:
            raise ArchitectureError(f"missing weight {name!r}")
        if tuple(weights[name].shape) != shape:
            raise ArchitectureError(f"{name} has shape {weights[name].shape}, expected {shape}")


def _as_images(arch: CnnArchitecture, batch, dtype):
    x = np.asarray(batch, dtype=dtype)
    if x.ndim == 4:
        if x.shape[-1] != 1:
            raise ArchitectureError("input must have a single channel")
        x = x[..., 0]
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != tuple(arch.input_shape):
        raise ArchitectureError(f"input shape {np.shape(batch)} does not match {arch.input_shape}")
    return x


def _maxpool(r, p):
    win = np.lib.stride_tricks.sliding_window_view(r, (p, p), axis=(1, 2))
    return win.max(axis=(-2, -1))


def _maxpool_backward(r, pooled, dpooled, p):
    """Route each pooled gradient to the first maximal element of its window."""
    dr = np.zeros_like(r)
    hp, wp = pooled.shape[1:3]
    claimed = np.zeros(pooled.shape, dtype=bool)
    for di in range(p):
        for dj in range(p):
            hit = (r[:, di:di + hp, dj:dj + wp] == pooled) & ~claimed
            claimed |= hit
            dr[:, di:di + hp, dj:dj + wp] += np.where(hit, dpooled, 0.0)
    return dr


def forward(arch: CnnArchitecture, weights: dict, batch, *, training: bool = False,
            bn_mode: str | None = None, rng: np.random.Generator | None = None):
    """Logits for a batch plus the cache needed by :func:`backward`.

    ``bn_mode`` is ``"batch"`` (normalize with batch statistics) or
    ``"running"`` (stored statistics); it defaults to batch statistics when
    training. Dropout is applied only when ``training`` and ``rng`` is given.
    """
    dtype = weights["conv_w"].dtype
    x = _as_images(arch, batch, dtype)
    bn_mode = bn_mode or ("batch" if training else "running")
    k, p = arch.conv_size, arch.pool_size

    patches = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    h = np.tensordot(patches, weights["conv_w"], axes=([3, 4], [0, 1])) + weights["conv_b"]

    if bn_mode == "batch":
        mu = h.mean(axis=(0, 1, 2))
        var = h.var(axis=(0, 1, 2))
    elif bn_mode == "running":
        mu, var = weights["bn_mean"], weights["bn_var"]
    else:
        raise ArgumentError(f"bn_mode must be 'batch' or 'running', got {bn_mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (h - mu) * inv_std
    bn = weights["bn_gamma"] * xhat + weights["bn_beta"]
    r = np.maximum(bn, 0.0)
    pooled = _maxpool(r, p)

    drop = training and rng is not None and arch.dropout_rate > 0
    keep = 1.0 - arch.dropout_rate
    mask1 = (rng.random(pooled.shape) < keep).astype(dtype) / keep if drop else None
    flat = (pooled * mask1 if drop else pooled).reshape(x.shape[0], -1)
    a1 = flat @ weights["fc1_w"] + weights["fc1_b"]
    mask2 = (rng.random(a1.shape) < keep).astype(dtype) / keep if drop else None
    a1d = a1 * mask2 if drop else a1
    logits = a1d @ weights["fc2_w"] + weights["fc2_b"]

    cache = {
        "patches": patches, "xhat": xhat, "inv_std": inv_std, "bn": bn, "r": r,
        "pooled": pooled, "mask1": mask1, "flat": flat, "mask2": mask2, "a1d": a1d,
        "bn_mode": bn_mode, "batch_mean": mu, "batch_var": var,
    }
    return logits, cache


def backward(arch: CnnArchitecture, weights: dict, cache: dict, dlogits) -> dict:
    """Gradients of the loss w.r.t. every trainable array, given dL/dlogits."""
    g = {}
    g["fc2_w"] = cache["a1d"].T @ dlogits
    g["fc2_b"] = dlogits.sum(axis=0)
    da1 = dlogits @ weights["fc2_w"].T
    if cache["mask2"] is not None:
        da1 = da1 * cache["mask2"]
    g["fc1_w"] = cache["flat"].T @ da1
    g["fc1_b"] = da1.sum(axis=0)
    dpooled = (da1 @ weights["fc1_w"].T).reshape(cache["pooled"].shape)
    if cache["mask1"] is not None:
        dpooled = dpooled * cache["mask1"]

    dr = _maxpool_backward(cache["r"], cache["pooled"], dpooled, arch.pool_size)
    dbn = dr * (cache["bn"] > 0)
    xhat = cache["xhat"]
    g["bn_gamma"] = (dbn * xhat).sum(axis=(0, 1, 2))
    g["bn_beta"] = dbn.sum(axis=(0, 1, 2))
    dxhat = dbn * weights["bn_gamma"]
    if cache["bn_mode"] == "batch":
        m = dxhat.shape[0] * dxhat.shape[1] * dxhat.shape[2]
        dh = cache["inv_std"] / m * (
            m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
        )
    else:
        dh = dxhat * cache["inv_std"]
    g["conv_w"] = np.tensordot(cache["patches"], dh, axes=([0, 1, 2], [0, 1, 2]))
    g["conv_b"] = dh.sum(axis=(0, 1, 2))
    return g


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, y):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    y = np.asarray(y, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), y].mean()
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    return float(loss), d / n


def cnn_forward(arch: CnnArchitecture, weights: dict, batch, chunk: int = 32) -> np.ndarray:
    """Class probabilities (b, 2) in inference mode."""
    check_weights(arch, weights)
    x = _as_images(arch, batch, weights["conv_w"].dtype)
    out = [softmax(forward(arch, weights, x[i:i + chunk])[0]) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(out, axis=0)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def _loss_and_grads(arch, weights, xb, yb, rng, micro):
    """Mini-batch loss and gradients, optionally in ghost-BN slices."""
    n = xb.shape[0]
    step = n if micro is None else max(1, min(micro, n))
    total_loss = 0.0
    grads = None
    stats = []
    for s in range(0, n, step):
        xs, ys = xb[s:s + step], yb[s:s + step]
        logits, cache = forward(arch, weights, xs, training=True, rng=rng)
        loss, dlog = cross_entropy(logits, ys)
        frac = xs.shape[0] / n
        g = backward(arch, weights, cache, dlog * frac)
        grads = g if grads is None else {k: grads[k] + g[k] for k in g}
        total_loss += loss * frac
        stats.append((cache["batch_mean"], cache["batch_var"], xs.shape[0]))
    return total_loss, grads, stats


def evaluate_loss(arch, weights, X, y, chunk: int = 32) -> float:
    total = 0.0
    for i in range(0, X.shape[0], chunk):
        logits, _ = forward(arch, weights, X[i:i + chunk])
        loss, _ = cross_entropy(logits, y[i:i + chunk])
        total += loss * min(chunk, X.shape[0] - i)
    return total / X.shape[0]


def cnn_train(arch: CnnArchitecture, X, y, cfg: TrainConfig = TrainConfig()):
    """Train with Adam; return ``(weights, history)``.

    A ``val_fraction`` share of the data is held out and the weights of
    the epoch with the lowest validation loss are returned. Everything
    random (split, initialization, shuffling, dropout) derives from
    ``cfg.seed``.
    """
    y = check_binary(y)
    dtype = np.dtype(cfg.dtype)
    X = _as_images(arch, X, dtype)
    n = X.shape[0]
    if n == 0:
        raise DegenerateDataError("empty training set")
    split_rng, init_rng, shuffle_rng, drop_rng = (
        np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(cfg.seed).spawn(4)
    )
    perm = split_rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n >= 10 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    Xtr, ytr = X[tr_idx], y[tr_idx]
    Xval, yval = X[val_idx], y[val_idx]

    batch = cfg.batch_size
    if batch > Xtr.shape[0]:
        log.warning("batch size %d exceeds %d training samples; clamping", batch, Xtr.shape[0])
        batch = Xtr.shape[0]

    weights = init_weights(arch, init_rng, dtype)
    m = {k: np.zeros_like(weights[k]) for k in TRAINABLE}
    v = {k: np.zeros_like(weights[k]) for k in TRAINABLE}
    t = 0
    history = {"train_loss": [], "val_loss": [], "first_batch_loss": None, "best_epoch": 0}
    best_loss, best = np.inf, {k: a.copy() for k, a in weights.items()}

    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(Xtr.shape[0])
        epoch_loss = 0.0
        for s in range(0, order.size, batch):
            idx = order[s:s + batch]
            loss, grads, stats = _loss_and_grads(arch, weights, Xtr[idx], ytr[idx], drop_rng, cfg.micro_batch)
            if history["first_batch_loss"] is None:
                history["first_batch_loss"] = loss
            epoch_loss += loss * idx.size
            t += 1
            lr_t = cfg.learning_rate * np.sqrt(1 - cfg.beta2**t) / (1 - cfg.beta1**t)
            for k in TRAINABLE:
                m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * grads[k]
                v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * grads[k] ** 2
                weights[k] = (weights[k] - lr_t * m[k] / (np.sqrt(v[k]) + cfg.adam_eps)).astype(dtype)
            for mu, var, cnt in stats:
                unbiased = var * cnt * np.prod(arch.conv_shape[:2]) / max(cnt * np.prod(arch.conv_shape[:2]) - 1, 1)
                weights["bn_mean"] = ((1 - BN_MOMENTUM) * weights["bn_mean"] + BN_MOMENTUM * mu).astype(dtype)
                weights["bn_var"] = ((1 - BN_MOMENTUM) * weights["bn_var"] + BN_MOMENTUM * unbiased).astype(dtype)
        history["train_loss"].append(epoch_loss / order.size)
        monitor = evaluate_loss(arch, weights, Xval, yval) if n_val else history["train_loss"][-1]
        history["val_loss"].append(monitor)
        if monitor < best_loss:
            best_loss = monitor
            best = {k: a.copy() for k, a in weights.items()}
            history["best_epoch"] = epoch
        log.debug("epoch %d: train %.4f, val %.4f", epoch, history["train_loss"][-1], monitor)
    return best, history


def train_cnn(X, y, arch: CnnArchitecture = FD_ARCH, cfg: TrainConfig = TrainConfig()) -> TrainedModel:
    weights, history = cnn_train(arch, X, y, cfg)
    return TrainedModel(CNN, arch.to_dict(), weights, None,
                        {"best_epoch": history["best_epoch"], "val_loss": history["val_loss"]})


@register_scorer(CNN)
def _cnn_scores(params, hyper, X):
    arch = CnnArchitecture.from_dict(hyper)
    weights = {k: np.asarray(a) for k, a in params.items()}
    out = []
    for i in range(0, X.shape[0], 32):
        logits, _ = forward(arch, weights, X[i:i + 32])
        out.append(logits[:, 1] - logits[:, 0])
    return np.concatenate(out).astype(np.float64)


# --------------------------------------------------------------------------
# Gradient check
# --------------------------------------------------------------------------


def relative_error(a, b, floor: float = 1e-8):
    """|a - b| / max(|a|, |b|, floor); symmetric in its arguments."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _pool_winners(r, pooled, p):
    """Offset index (di * p + dj) of the element each pooled value came from."""
    hp, wp = pooled.shape[1:3]
    winner = np.full(pooled.shape, -1, dtype=np.int16)
    for di in range(p):
        for dj in range(p):
            hit = (r[:, di:di + hp, dj:dj + wp] == pooled) & (winner < 0)
            winner[hit] = di * p + dj
    return winner


def cnn_grad_check(arch: CnnArchitecture, weights: dict, sample, label: int = 0,
                   n_per_layer: int = 200, step: float = 1e-5, seed: int = 0,
                   bn_mode: str = "running", floor: float = 1e-7,
                   return_details: bool = False):
    """Largest relative error between backprop and central differences.

    Runs in float64 with dropout off. Up to ``n_per_layer`` parameters are
    drawn at random from each layer (all of them when the layer is
    smaller). A central difference is only meaningful when the +/- step
    does not move any ReLU or max-pool decision; perturbations that do are
    discarded and another parameter is drawn in their place. Dense-layer
    parameters are perturbed starting from the cached flattened
    activations, which is exact because nothing upstream depends on them.
    """
    w = {k: np.array(a, dtype=np.float64) for k, a in weights.items()}
    check_weights(arch, w)
    x = _as_images(arch, sample, np.float64)
    y = np.full(x.shape[0], int(label))
    rng = np.random.default_rng(seed)
    p = arch.pool_size

    logits, cache = forward(arch, w, x, bn_mode=bn_mode)
    _, dlog = cross_entropy(logits, y)
    grads = backward(arch, w, cache, dlog)
    flat = cache["flat"]
    base_active = cache["bn"] > 0
    base_winner = _pool_winners(cache["r"], cache["pooled"], p)

    def head_loss():
        a1 = flat @ w["fc1_w"] + w["fc1_b"]
        return cross_entropy(a1 @ w["fc2_w"] + w["fc2_b"], y)[0], True

    # Conv and batch-norm parameters only touch their own channel, so a
    # perturbed loss recomputes that channel from the input image and
    # patches the fc1 pre-activation accordingly.
    patches = cache["patches"]
    hp, wp, n_ch = arch.pool_shape
    fc1_rows = w["fc1_w"].reshape(hp, wp, n_ch, -1)
    a1_base = flat @ w["fc1_w"] + w["fc1_b"]

    def channel_loss(c):
        hc = np.tensordot(patches, w["conv_w"][:, :, c], axes=([3, 4], [0, 1])) + w["conv_b"][c]
        if bn_mode == "batch":
            mu, var = hc.mean(), hc.var()
        else:
            mu, var = w["bn_mean"][c], w["bn_var"][c]
        bnc = w["bn_gamma"][c] * (hc - mu) / np.sqrt(var + BN_EPS) + w["bn_beta"][c]
        rc = np.maximum(bnc, 0.0)[..., None]
        pc = _maxpool(rc, p)
        smooth = np.array_equal(bnc > 0, base_active[..., c]) and np.array_equal(
            _pool_winners(rc, pc, p)[..., 0], base_winner[..., c])
        delta = pc[..., 0] - cache["pooled"][..., c]
        a1 = a1_base + np.tensordot(delta, fc1_rows[:, :, c, :], axes=([1, 2], [0, 1]))
        return cross_entropy(a1 @ w["fc2_w"] + w["fc2_b"], y)[0], smooth

    worst = 0.0
    details = {}
    for layer, names in LAYERS.items():
        sizes = [w[nm].size for nm in names]
        total = sum(sizes)
        want = min(n_per_layer, total)
        errs, skipped = [], 0
        for flat_idx in rng.permutation(total):
            if len(errs) == want:
                break
            which = 0 if flat_idx < sizes[0] else 1
            idx = flat_idx - (0 if which == 0 else sizes[0])
            name = names[which]
            if layer in ("fc1", "fc2"):
                loss_fn = head_loss
            else:
                channel = idx % n_ch  # conv_w is (k, k, F); the rest are (F,)
                loss_fn = lambda: channel_loss(channel)  # noqa: E731
            arr = w[name].reshape(-1)
            orig = arr[idx]
            arr[idx] = orig + step
            up, ok_up = loss_fn()
            arr[idx] = orig - step
            down, ok_down = loss_fn()
            arr[idx] = orig
            if not (ok_up and ok_down):
                skipped += 1
                continue
            numeric = (up - down) / (2 * step)
            analytic = grads[name].reshape(-1)[idx]
            errs.append(float(relative_error(analytic, numeric, floor)))
        details[layer] = {"max_rel_error": max(errs) if errs else 0.0,
                          "checked": len(errs), "skipped_kinks": skipped}
        worst = max(worst, details[layer]["max_rel_error"])
    return (worst, details) if return_details else worst
