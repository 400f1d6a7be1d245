"""Parameters, forward pass and backpropagation for the spectral CNNs.

Activations are kept channel-last, shape (batch, spectral positions, channels).
Parameter names starting with ``block`` belong to the feature extractor,
names starting with ``head`` to the classifier.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hsitransfer import rng as _rng
from hsitransfer.errors import DataError
from hsitransfer.nn.arch import feature_size, shape_trace

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

EXTRACTOR = "block"
HEAD = "head"


@dataclass
class ModelParams:
    arch: object
    input_bands: int
    weights: dict
    buffers: dict = field(default_factory=dict)

    def copy(self):
        return ModelParams(
            self.arch,
            self.input_bands,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def astype(self, dtype):
        return ModelParams(
            self.arch,
            self.input_bands,
            {k: v.astype(dtype) for k, v in self.weights.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
        )

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def names(self, part=None):
        return [k for k in self.weights if part is None or k.startswith(part)]

    def parameter_count(self):
        return sum(v.size for v in self.weights.values())


def _he_uniform(gen, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return gen.uniform(-bound, bound, size=shape).astype(dtype)


def _init_head(arch, in_features, gen, dtype):
    weights = {}
    sizes = [in_features, *arch.fc_sizes, arch.class_count]
    for j in range(len(sizes) - 1):
        weights[f"head.fc{j}.weight"] = _he_uniform(gen, (sizes[j + 1], sizes[j]), sizes[j], dtype)
        weights[f"head.fc{j}.bias"] = np.zeros(sizes[j + 1], dtype=dtype)
    return weights


def init_params(arch, input_bands, seed, dtype=np.float32):
    """He-uniform fan-in weights, zero biases, BN scale 1 and shift 0."""
    shape_trace(arch, input_bands)
    gen = _rng.stream(seed, _rng.INIT)
    weights, buffers = {}, {}
    channels = 1
    for i in range(arch.blocks):
        fan_in = channels * arch.conv_len
        weights[f"block{i}.conv.weight"] = _he_uniform(
            gen, (arch.kernels, channels, arch.conv_len), fan_in, dtype
        )
        weights[f"block{i}.conv.bias"] = np.zeros(arch.kernels, dtype=dtype)
        if arch.batch_norm:
            weights[f"block{i}.bn.gamma"] = np.ones(arch.kernels, dtype=dtype)
            weights[f"block{i}.bn.beta"] = np.zeros(arch.kernels, dtype=dtype)
            buffers[f"block{i}.bn.running_mean"] = np.zeros(arch.kernels, dtype=dtype)
            buffers[f"block{i}.bn.running_var"] = np.ones(arch.kernels, dtype=dtype)
        channels = arch.kernels
    weights.update(_init_head(arch, feature_size(arch, input_bands), gen, dtype))
    return ModelParams(arch, input_bands, weights, buffers)


def reinit_head(params, class_count, seed):
    """Fresh classifier sized for ``class_count``; extractor tensors are copied."""
    arch = params.arch.with_classes(class_count)
    gen = _rng.stream(seed, _rng.HEAD)
    weights = {k: v.copy() for k, v in params.weights.items() if k.startswith(EXTRACTOR)}
    weights.update(_init_head(arch, feature_size(arch, params.input_bands), gen, params.dtype))
    buffers = {k: v.copy() for k, v in params.buffers.items()}
    return ModelParams(arch, params.input_bands, weights, buffers)


# -- layer primitives ------------------------------------------------------


def _conv_forward(x, w, b, stride):
    n, _, c = x.shape
    o, _, k = w.shape
    win = sliding_window_view(x, k, axis=1)[:, ::stride]  # (n, lout, c, k)
    lout = win.shape[1]
    cols = win.reshape(n * lout, c * k)
    out = cols @ w.reshape(o, c * k).T + b
    return out.reshape(n, lout, o), cols


def _conv_backward(dout, cols, x_shape, w, stride, need_dx):
    n, length, c = x_shape
    o, _, k = w.shape
    lout = dout.shape[1]
    d2 = dout.reshape(n * lout, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(o, c * k)).reshape(n, lout, c, k)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    span = stride * (lout - 1) + 1
    for j in range(k):
        dx[:, j:j + span:stride, :] += dcols[:, :, :, j]
    return dx, dw, db


def _bn_forward(x, gamma, beta, buffers, prefix, mode):
    if mode == "train":
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        m = x.shape[0] * x.shape[1]
        unbiased = var * (m / (m - 1)) if m > 1 else var
        rm, rv = buffers[prefix + "running_mean"], buffers[prefix + "running_var"]
        rm *= BN_MOMENTUM
        rm += (1 - BN_MOMENTUM) * mean
        rv *= BN_MOMENTUM
        rv += (1 - BN_MOMENTUM) * unbiased
    else:
        mean = buffers[prefix + "running_mean"]
        var = buffers[prefix + "running_var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, mode)


def _bn_backward(dy, gamma, cache):
    xhat, inv_std, mode = cache
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxhat = dy * gamma
    if mode == "train":
        m = dy.shape[0] * dy.shape[1]
        dx = inv_std / m * (
            m * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1))
        )
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta


def _pool_forward(x, size, stride):
    win = sliding_window_view(x, size, axis=1)[:, ::stride]  # (n, lout, c, size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, x_shape, size, stride):
    dx = np.zeros(x_shape, dtype=dout.dtype)
    lout = dout.shape[1]
    span = stride * (lout - 1) + 1
    for j in range(size):
        dx[:, j:j + span:stride, :] += np.where(arg == j, dout, 0)
    return dx


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


# -- network ---------------------------------------------------------------


def _as_input(params, spectra):
    x = np.asarray(spectra, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != params.input_bands:
        raise DataError(
            f"expected spectra of shape (batch, {params.input_bands}), got {x.shape}"
        )
    return x[:, :, None]


def extract(params, spectra, mode="infer", caches=None):
    """Run the conv blocks; returns flattened features (batch, features)."""
    arch = params.arch
    w = params.weights
    h = _as_input(params, spectra)
    for i in range(arch.blocks):
        p = f"block{i}."
        x_shape = h.shape
        h, cols = _conv_forward(h, w[p + "conv.weight"], w[p + "conv.bias"], arch.conv_stride)
        if caches is not None:
            caches.append(("conv", p, cols, x_shape))
        if arch.batch_norm:
            h, bn_cache = _bn_forward(h, w[p + "bn.gamma"], w[p + "bn.beta"], params.buffers,
                                      p + "bn.", mode)
            if caches is not None:
                caches.append(("bn", p, bn_cache))
        mask = h > 0
        h = h * mask
        if caches is not None:
            caches.append(("relu", p, mask))
        if arch.pooling:
            x_shape = h.shape
            h, arg = _pool_forward(h, arch.pool_len, arch.pool_stride)
            if caches is not None:
                caches.append(("pool", p, arg, x_shape))
    return h.reshape(h.shape[0], -1)


def classify(params, features, caches=None):
    """Run the fully connected head; returns logits."""
    w = params.weights
    h = np.asarray(features, dtype=params.dtype)
    layers = len(params.arch.fc_sizes) + 1
    for j in range(layers):
        p = f"head.fc{j}."
        if caches is not None:
            caches.append(("fc", p, h))
        h = h @ w[p + "weight"].T + w[p + "bias"]
        if j < layers - 1:
            mask = h > 0
            h = h * mask
            if caches is not None:
                caches.append(("relu", p, mask))
    return h


def logits(params, spectra, mode="infer"):
    return classify(params, extract(params, spectra, mode))


def forward(params, spectra, mode="infer"):
    """Class probability rows; ``train`` mode normalizes with batch statistics
    and updates the BN running averages."""
    return np.exp(_log_softmax(logits(params, spectra, mode)))


def _check_labels(labels, class_count, n):
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {y.shape}")
    if n and (y.min() < 0 or y.max() >= class_count):
        raise DataError(f"labels must lie in 0..{class_count - 1}")
    return y


def _backward(params, caches, dz, wanted):
    grads = {}
    arch = params.arch
    w = params.weights
    # index of the deepest cache entry whose inputs still need a gradient
    first_needed = next(
        (i for i, c in enumerate(caches) if any(n.startswith(c[1]) for n in wanted)), None
    )
    if first_needed is None:
        return grads
    d = dz
    for idx in range(len(caches) - 1, first_needed - 1, -1):
        kind, p = caches[idx][0], caches[idx][1]
        need_dx = idx > first_needed
        if kind == "fc":
            h = caches[idx][2]
            grads[p + "weight"] = d.T @ h
            grads[p + "bias"] = d.sum(axis=0)
            if need_dx:
                d = d @ w[p + "weight"]
        elif kind == "relu":
            mask = caches[idx][2]
            d = d.reshape(mask.shape) * mask
        elif kind == "pool":
            _, _, arg, x_shape = caches[idx]
            if d.ndim == 2:
                d = d.reshape(arg.shape)
            d = _pool_backward(d, arg, x_shape, arch.pool_len, arch.pool_stride)
        elif kind == "bn":
            if d.ndim == 2:
                d = d.reshape(caches[idx][2][0].shape)
            d, grads[p + "bn.gamma"], grads[p + "bn.beta"] = _bn_backward(
                d, w[p + "bn.gamma"], caches[idx][2]
            )
        elif kind == "conv":
            _, _, cols, x_shape = caches[idx]
            wt = w[p + "conv.weight"]
            if d.ndim == 2:
                d = d.reshape(x_shape[0], -1, wt.shape[0])
            d, grads[p + "conv.weight"], grads[p + "conv.bias"] = _conv_backward(
                d, cols, x_shape, wt, arch.conv_stride, need_dx
            )
    return {k: v for k, v in grads.items() if k in wanted}


def _loss_from_logits(z, y):
    logp = _log_softmax(z)
    n = z.shape[0]
    loss = -logp[np.arange(n), y].mean()
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1
    return float(loss), dz / n


def loss_and_gradients(params, spectra, labels, mode="train", wanted=None):
    """Mean cross-entropy of the softmax output and its gradients.

    ``wanted`` limits which parameter gradients are computed; backprop stops
    at the shallowest layer that owns one of them.
    """
    wanted = set(params.weights) if wanted is None else set(wanted)
    caches = []
    feats = extract(params, spectra, mode, caches)
    z = classify(params, feats, caches)
    y = _check_labels(labels, params.arch.class_count, z.shape[0])
    loss, dz = _loss_from_logits(z, y)
    return loss, _backward(params, caches, dz, wanted)


def head_loss_and_gradients(params, features, labels, wanted=None):
    """Same as :func:`loss_and_gradients` but starting from extractor features."""
    wanted = {n for n in (params.weights if wanted is None else wanted) if n.startswith(HEAD)}
    caches = []
    z = classify(params, features, caches)
    y = _check_labels(labels, params.arch.class_count, z.shape[0])
    loss, dz = _loss_from_logits(z, y)
    return loss, _backward(params, caches, dz, wanted)
