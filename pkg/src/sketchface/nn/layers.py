"""Trainable layers with explicit forward/backward passes (numpy only).

Layout is NCHW.  Parameters live in f32 by default; every layer accepts a
dtype override so gradient checks can run the whole pass in f64.
"""

import numpy as np


class ShapeError(ValueError):
    pass


class Layer:
    """Base: parameters as {name: array}, gradients accumulated in .grads."""

    def params(self):
        return {}

    def grads(self):
        return {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


def he_init(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, oh, ow, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(dcols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    dx = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    dcols = dcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i: i + stride * oh: stride, j: j + stride * ow: stride] += dcols[:, :, :, :, i, j]
    if pad:
        dx = dx[:, :, pad: hp - pad, pad: wp - pad]
    return dx


class Conv2D(Layer):
    def __init__(self, in_ch, out_ch, ksize, stride=1, pad=0, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * ksize * ksize
        self.w = he_init(rng, (out_ch, in_ch, ksize, ksize), fan_in, dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.stride = stride
        self.pad = pad
        self.ksize = ksize
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.w.shape[1]:
            raise ShapeError(
                f"Conv2D expects (n, {self.w.shape[1]}, h, w), got {x.shape}")
        cols, oh, ow = _im2col(x, self.ksize, self.ksize, self.stride, self.pad)
        wmat = self.w.reshape(self.w.shape[0], -1)
        out = cols @ wmat.T + self.b
        out = out.reshape(x.shape[0], oh, ow, -1).transpose(0, 3, 1, 2)
        self._cache = (x.shape, cols)
        return out

    def backward(self, dy):
        x_shape, cols = self._cache
        n, oc, oh, ow = dy.shape
        dyr = dy.transpose(0, 2, 3, 1).reshape(-1, oc)
        self.dw[...] = (dyr.T @ cols).reshape(self.w.shape)
        self.db[...] = dyr.sum(axis=0)
        dcols = dyr @ self.w.reshape(oc, -1)
        return _col2im(dcols, x_shape, self.ksize, self.ksize, self.stride, self.pad)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class MaxPool(Layer):
    def __init__(self, ksize=3, stride=2):
        self.ksize = ksize
        self.stride = stride

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        cols, oh, ow = _im2col(
            x.reshape(n * c, 1, h, w), self.ksize, self.ksize, self.stride, 0)
        # one argmax per window: first maximum wins, deterministically
        self._argmax = np.argmax(cols, axis=1)
        out = cols[np.arange(cols.shape[0]), self._argmax]
        self._x_shape = x.shape
        self._oh, self._ow = oh, ow
        return out.reshape(n, c, oh, ow)

    def backward(self, dy):
        n, c, h, w = self._x_shape
        k2 = self.ksize * self.ksize
        dcols = np.zeros((dy.size, k2), dtype=dy.dtype)
        dcols[np.arange(dy.size), self._argmax] = dy.ravel()
        dx = _col2im(dcols, (n * c, 1, h, w), self.ksize, self.ksize, self.stride, 0)
        return dx.reshape(n, c, h, w)


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.w = he_init(rng, (in_dim, out_dim), in_dim, dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ShapeError(f"Dense expects (n, {self.w.shape[0]}), got {x.shape}")
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy):
        self.dw[...] = self._x.T @ dy
        self.db[...] = dy.sum(axis=0)
        return dy @ self.w.T


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_params(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Sequential):
                out.extend(layer.named_params(f"{prefix}{i}."))
            else:
                for name in layer.params():
                    out.append((f"{prefix}{i}.{name}", layer, name))
        return out


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    p = softmax(logits.astype(np.float64))
    n = logits.shape[0]
    loss = float(-np.log(np.clip(p[np.arange(n), labels], 1e-300, None)).mean())
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, (dlogits / n).astype(logits.dtype)
