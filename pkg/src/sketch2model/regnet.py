"""Weight-regression networks with hand-derived backpropagation.

Two architectures: a 4-layer MLP mapping a flat input vector to a (d+1)
weight vector, and a 6-layer convolutional network mapping a (d+1) x c
weight matrix to another, kernels m x 1 so nothing mixes across the class
axis.  Batch norm plus leaky ReLU follow every layer except the last.

Parameters live in plain numpy arrays.  `parameters()` returns them in a
fixed order shared by the gradient lists, the Adam state, and the
checkpoint payload.  Train-mode forward updates batch-norm running stats in
place; eval-mode forward is pure.
"""

import json
from dataclasses import dataclass

import numpy as np

from sketch2model.core import ShapeError

BN_MOMENTUM = 0.9
BN_EPS = 1e-5
LEAKY_SLOPE = 0.01
CONV_CHANNELS = (1, 32, 64, 128, 64, 32, 1)


def affine_forward(x, w, b):
    if x.shape[1] != w.shape[0]:
        raise ShapeError("affine input dim %d != weight rows %d" % (x.shape[1], w.shape[0]))
    return x @ w + b, {"x": x, "w": w}


def affine_backward(dy, cache):
    x, w = cache["x"], cache["w"]
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def leaky_forward(x, slope):
    return np.where(x > 0, x, slope * x), {"x": x, "slope": slope}


def leaky_backward(dy, cache):
    return dy * np.where(cache["x"] > 0, 1.0, cache["slope"])


def bn_forward(x, gamma, beta, running_mean, running_var, mode, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Feature-wise batch norm on (n, d) data.

    Train mode normalizes by batch statistics (biased variance) and folds
    them into the running stats in place; eval mode uses the running stats
    and works for a single row.
    """
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("train-mode batch norm needs batch size >= 2, got %d" % x.shape[0])
        mean = x.mean(axis=0)
        centered = x - mean
        var = (centered * centered).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
        cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma}
        return gamma * xhat + beta, cache
    xhat = (x - running_mean) / np.sqrt(running_var + eps)
    return gamma * xhat + beta, {"xhat": xhat, "inv_std": None, "gamma": gamma}


def bn_backward(dy, cache):
    """Gradients through train-mode batch norm, batch-statistics terms included."""
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv_std * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
    return dx, dgamma, dbeta


def conv_mx1_forward(x, kernel, bias):
    """Convolution along the row axis only: input (n, c_in, h, w), kernel (c_out, c_in, m, 1)."""
    n, c_in, h, w = x.shape
    c_out, c_in_k, m, one = kernel.shape
    if c_in_k != c_in or one != 1:
        raise ShapeError("kernel shape %s does not match input channels %d" % (kernel.shape, c_in))
    pad = (m - 1) // 2
    xp = np.zeros((n, c_in, h + 2 * pad, w))
    xp[:, :, pad : pad + h, :] = x
    out = np.empty((n, c_out, h, w))
    out[:] = bias[None, :, None, None]
    for t in range(m):
        out += np.einsum("nchw,oc->nohw", xp[:, :, t : t + h, :], kernel[:, :, t, 0], optimize=True)
    return out, {"xp": xp, "kernel": kernel, "h": h}


def conv_mx1_backward(dy, cache):
    xp, kernel, h = cache["xp"], cache["kernel"], cache["h"]
    c_out, c_in, m, _ = kernel.shape
    pad = (m - 1) // 2
    dkernel = np.empty_like(kernel)
    dxp = np.zeros_like(xp)
    for t in range(m):
        dkernel[:, :, t, 0] = np.einsum("nohw,nchw->oc", dy, xp[:, :, t : t + h, :], optimize=True)
        dxp[:, :, t : t + h, :] += np.einsum("nohw,oc->nchw", dy, kernel[:, :, t, 0], optimize=True)
    dbias = dy.sum(axis=(0, 2, 3))
    dx = dxp[:, :, pad : pad + h, :]
    return dx, dkernel, dbias


def _channels_last(x):
    n, c, h, w = x.shape
    return np.ascontiguousarray(np.moveaxis(x, 1, 3)).reshape(n * h * w, c), (n, h, w, c)


def _channels_back(flat, dims):
    n, h, w, c = dims
    return np.moveaxis(flat.reshape(n, h, w, c), 3, 1)


def xavier_uniform(fan_in, fan_out, shape, stream):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    u = stream.uniform(int(np.prod(shape)))
    return ((2.0 * u - 1.0) * bound).reshape(shape)


@dataclass
class MlpRegressor:
    """Four affine layers; batch norm and leaky ReLU on the first three."""

    weights: list
    biases: list
    gammas: list
    betas: list
    run_mean: list
    run_var: list
    slope: float = LEAKY_SLOPE
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    def __post_init__(self):
        if len(self.weights) != 4 or len(self.gammas) != 3:
            raise ValueError("expected 4 affine layers with batch norm on the first 3")

    @classmethod
    def create(cls, input_dim, output_dim, hidden=(512, 512, 512), stream=None, slope=LEAKY_SLOPE):
        if len(hidden) != 3:
            raise ValueError("expected 3 hidden widths, got %d" % len(hidden))
        dims = (input_dim,) + tuple(hidden) + (output_dim,)
        weights, biases = [], []
        for i in range(4):
            weights.append(xavier_uniform(dims[i], dims[i + 1], (dims[i], dims[i + 1]), stream))
            biases.append(np.zeros(dims[i + 1]))
        return cls(
            weights=weights,
            biases=biases,
            gammas=[np.ones(h) for h in hidden],
            betas=[np.zeros(h) for h in hidden],
            run_mean=[np.zeros(h) for h in hidden],
            run_var=[np.ones(h) for h in hidden],
            slope=slope,
        )

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    def parameters(self):
        params = []
        for i in range(3):
            params += [self.weights[i], self.biases[i], self.gammas[i], self.betas[i]]
        params += [self.weights[3], self.biases[3]]
        return params


def mlp_forward(net, batch, mode):
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    if batch.shape[1] != net.input_dim:
        raise ShapeError("input dim %d != network input dim %d" % (batch.shape[1], net.input_dim))
    caches = []
    h = batch
    for i in range(3):
        h, c_aff = affine_forward(h, net.weights[i], net.biases[i])
        h, c_bn = bn_forward(
            h, net.gammas[i], net.betas[i], net.run_mean[i], net.run_var[i], mode, net.momentum, net.eps
        )
        h, c_act = leaky_forward(h, net.slope)
        caches.append((c_aff, c_bn, c_act))
    out, c_aff = affine_forward(h, net.weights[3], net.biases[3])
    caches.append((c_aff,))
    return out, caches


def mlp_backward(net, caches, upstream):
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (caches[-1][0]["x"].shape[0], net.output_dim):
        raise ShapeError("upstream gradient shape %s does not match forward output" % (upstream.shape,))
    grads = [None] * len(net.parameters())
    dh, dw3, db3 = affine_backward(upstream, caches[3][0])
    grads[12], grads[13] = dw3, db3
    for i in (2, 1, 0):
        c_aff, c_bn, c_act = caches[i]
        dh = leaky_backward(dh, c_act)
        if c_bn["inv_std"] is None:
            raise ValueError("backward requires a train-mode cache")
        dh, dgamma, dbeta = bn_backward(dh, c_bn)
        dh, dw, db = affine_backward(dh, c_aff)
        grads[4 * i : 4 * i + 4] = [dw, db, dgamma, dbeta]
    return grads, dh


@dataclass
class ConvRegressor:
    """Six m x 1 convolutions; batch norm and leaky ReLU on the first five."""

    kernels: list
    biases: list
    gammas: list
    betas: list
    run_mean: list
    run_var: list
    kernel_m: int = 3
    slope: float = LEAKY_SLOPE
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    def __post_init__(self):
        if self.kernel_m < 1 or self.kernel_m % 2 == 0:
            raise ValueError("kernel_m must be odd, got %d" % self.kernel_m)
        if len(self.kernels) != 6 or len(self.gammas) != 5:
            raise ValueError("expected 6 conv layers with batch norm on the first 5")

    @classmethod
    def create(cls, stream=None, kernel_m=3, slope=LEAKY_SLOPE):
        if kernel_m < 1 or kernel_m % 2 == 0:
            raise ValueError("kernel_m must be odd, got %d" % kernel_m)
        kernels, biases = [], []
        for i in range(6):
            c_in, c_out = CONV_CHANNELS[i], CONV_CHANNELS[i + 1]
            fan_in, fan_out = c_in * kernel_m, c_out * kernel_m
            kernels.append(xavier_uniform(fan_in, fan_out, (c_out, c_in, kernel_m, 1), stream))
            biases.append(np.zeros(c_out))
        hidden = CONV_CHANNELS[1:6]
        return cls(
            kernels=kernels,
            biases=biases,
            gammas=[np.ones(c) for c in hidden],
            betas=[np.zeros(c) for c in hidden],
            run_mean=[np.zeros(c) for c in hidden],
            run_var=[np.ones(c) for c in hidden],
            kernel_m=kernel_m,
            slope=slope,
        )

    def parameters(self):
        params = []
        for i in range(5):
            params += [self.kernels[i], self.biases[i], self.gammas[i], self.betas[i]]
        params += [self.kernels[5], self.biases[5]]
        return params


def conv_forward(net, batch, mode):
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != 1:
        raise ShapeError("expected batch of shape (n, 1, rows, classes), got %s" % (batch.shape,))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    if mode == "train" and batch.shape[0] < 2:
        raise ValueError("train-mode batch norm needs batch size >= 2, got %d" % batch.shape[0])
    caches = []
    h = batch
    for i in range(5):
        h, c_conv = conv_mx1_forward(h, net.kernels[i], net.biases[i])
        flat, dims = _channels_last(h)
        flat, c_bn = bn_forward(
            flat, net.gammas[i], net.betas[i], net.run_mean[i], net.run_var[i], mode, net.momentum, net.eps
        )
        h = _channels_back(flat, dims)
        h, c_act = leaky_forward(h, net.slope)
        caches.append((c_conv, c_bn, dims, c_act))
    out, c_conv = conv_mx1_forward(h, net.kernels[5], net.biases[5])
    caches.append((c_conv,))
    return out, caches


def conv_backward(net, caches, upstream):
    upstream = np.asarray(upstream, dtype=np.float64)
    grads = [None] * len(net.parameters())
    dh, dk5, db5 = conv_mx1_backward(upstream, caches[5][0])
    grads[20], grads[21] = dk5, db5
    for i in (4, 3, 2, 1, 0):
        c_conv, c_bn, dims, c_act = caches[i]
        dh = leaky_backward(dh, c_act)
        if c_bn["inv_std"] is None:
            raise ValueError("backward requires a train-mode cache")
        flat, _ = _channels_last(dh)
        flat, dgamma, dbeta = bn_backward(flat, c_bn)
        dh = _channels_back(flat, dims)
        dh, dk, db = conv_mx1_backward(dh, c_conv)
        grads[4 * i : 4 * i + 4] = [dk, db, dgamma, dbeta]
    return grads, dh


@dataclass
class AdamState:
    m: list
    v: list
    t: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def create_adam(params, learning_rate=2e-5, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        t=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params, grads, state):
    """Bias-corrected Adam update, applied to the parameter arrays in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter, gradient, and state lists must align")
    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError("gradient shape %s != parameter shape %s" % (g.shape, p.shape))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / correction1
        vhat = v / correction2
        p -= state.learning_rate * mhat / (np.sqrt(vhat) + state.eps)
    return params, state


def _stats_arrays(net):
    out = []
    for rm, rv in zip(net.run_mean, net.run_var):
        out += [rm, rv]
    return out


def save_checkpoint(net, path_prefix):
    """Write <prefix>.json descriptor plus <prefix>.w64le parameter payload."""
    if isinstance(net, MlpRegressor):
        desc = {
            "format_version": 1,
            "arch": "mlp",
            "dims": [int(w.shape[0]) for w in net.weights] + [int(net.weights[-1].shape[1])],
        }
    elif isinstance(net, ConvRegressor):
        desc = {"format_version": 1, "arch": "conv", "kernel_m": int(net.kernel_m)}
    else:
        raise TypeError("unknown network type %r" % type(net).__name__)
    desc.update({"slope": net.slope, "momentum": net.momentum, "eps": net.eps})
    payload = np.concatenate([a.ravel() for a in net.parameters() + _stats_arrays(net)])
    with open(path_prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(desc, fh, indent=2)
        fh.write("\n")
    with open(path_prefix + ".w64le", "wb") as fh:
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def load_checkpoint(path_prefix):
    with open(path_prefix + ".json", "r", encoding="utf-8") as fh:
        desc = json.load(fh)
    if desc.get("format_version") != 1:
        raise ValueError("unsupported checkpoint format version %r" % (desc.get("format_version"),))
    if desc["arch"] == "mlp":
        dims = desc["dims"]
        net = MlpRegressor.create(dims[0], dims[4], hidden=tuple(dims[1:4]), stream=_ZeroStream())
    elif desc["arch"] == "conv":
        net = ConvRegressor.create(stream=_ZeroStream(), kernel_m=desc["kernel_m"])
    else:
        raise ValueError("unknown architecture %r" % desc["arch"])
    net.slope, net.momentum, net.eps = desc["slope"], desc["momentum"], desc["eps"]
    raw = np.fromfile(path_prefix + ".w64le", dtype="<f8")
    arrays = net.parameters() + _stats_arrays(net)
    total = sum(a.size for a in arrays)
    if raw.size != total:
        raise ValueError("payload has %d floats, descriptor needs %d" % (raw.size, total))
    pos = 0
    for a in arrays:
        a[...] = raw[pos : pos + a.size].reshape(a.shape)
        pos += a.size
    return net


class _ZeroStream:
    """Placeholder initializer source for checkpoints about to be overwritten."""

    def uniform(self, n):
        return np.full(n, 0.5)
