"""Minimal from-scratch neural network layers on numpy.

Layers operate on (batch, channels, length) float arrays and keep the
caches needed for backprop.  Convolutions are computed as a loop over
kernel taps, each tap being one batched matmul, which keeps all the
heavy lifting inside BLAS.  Training math is float32 by default;
everything also runs in float64 for gradient checking.
"""

import numpy as np
from scipy.special import expit


class Conv1d:
    """Valid (no padding) 1-d convolution, stride 1.

    Weight shape (out_channels, in_channels, kernel); output length is
    L - kernel + 1.
    """

    def __init__(self, in_channels, out_channels, kernel, rng=None,
                 dtype=np.float32, w_scale=None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        if w_scale is None:
            w_scale = np.sqrt(2.0 / (in_channels * kernel))  # He
        if rng is None:
            rng = np.random.default_rng()
        self.w = rng.normal(0.0, w_scale,
                            (out_channels, in_channels, kernel)).astype(dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gw = None
        self.gb = None
        self._x = None

    def forward(self, x, training=False):
        if x.shape[1] != self.in_channels:
            raise ValueError("expected %d input channels, got %d"
                             % (self.in_channels, x.shape[1]))
        if x.shape[2] < self.kernel:
            raise ValueError("input length %d shorter than kernel %d"
                             % (x.shape[2], self.kernel))
        self._x = x
        n_out = x.shape[2] - self.kernel + 1
        # per-tap slices of (O, C, K) have no unit-stride axis, which
        # knocks matmul off BLAS; copy to (K, O, C) once instead
        wt = np.ascontiguousarray(self.w.transpose(2, 0, 1))
        y = np.matmul(wt[0], x[:, :, :n_out])
        if self.kernel > 1:
            tmp = np.empty_like(y)
            for k in range(1, self.kernel):
                np.matmul(wt[k], x[:, :, k:k + n_out], out=tmp)
                y += tmp
        y += self.b[:, None]
        return y

    def backward(self, gy):
        x = self._x
        n_out = gy.shape[2]
        self.gb = gy.sum(axis=(0, 2))
        self.gw = np.empty_like(self.w)
        gx = np.zeros_like(x)
        wt = np.ascontiguousarray(self.w.transpose(2, 1, 0))
        tmp = np.empty((x.shape[0], self.in_channels, n_out), dtype=x.dtype)
        for k in range(self.kernel):
            self.gw[:, :, k] = np.matmul(
                gy, x[:, :, k:k + n_out].transpose(0, 2, 1)).sum(axis=0)
            np.matmul(wt[k], gy, out=tmp)
            gx[:, :, k:k + n_out] += tmp
        return gx

    def parameters(self):
        return [("w", self.w), ("b", self.b)]

    def gradients(self):
        return [self.gw, self.gb]


class MaxPool2:
    """Max pooling, window 2, stride 2; an odd trailing sample is dropped."""

    def forward(self, x, training=False):
        n2 = x.shape[2] // 2
        if n2 < 1:
            raise ValueError("input too short to pool")
        v = x[:, :, :2 * n2].reshape(x.shape[0], x.shape[1], n2, 2)
        self._idx = v.argmax(axis=3)
        self._shape = x.shape
        return np.take_along_axis(v, self._idx[..., None], axis=3)[..., 0]

    def backward(self, gy):
        b, c, n_in = self._shape
        n2 = gy.shape[2]
        buf = np.zeros((b, c, n2, 2), dtype=gy.dtype)
        np.put_along_axis(buf, self._idx[..., None], gy[..., None], axis=3)
        gx = np.zeros(self._shape, dtype=gy.dtype)
        gx[:, :, :2 * n2] = buf.reshape(b, c, 2 * n2)
        return gx

    def parameters(self):
        return []


class BatchNorm1d:
    """Per-channel batch normalization over (batch, length).

    Running statistics follow new = (1 - momentum)*old + momentum*batch
    with the unbiased batch variance, and are used in inference mode.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.ggamma = None
        self.gbeta = None

    def forward(self, x, training=False):
        if x.shape[1] != self.channels:
            raise ValueError("expected %d channels" % self.channels)
        if training:
            n = x.shape[0] * x.shape[2]
            if n < 2:
                raise ValueError("batch-norm needs more than one value")
            mu = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu[:, None]) * inv[:, None]
            m = self.momentum
            self.running_mean *= 1.0 - m
            self.running_mean += m * mu
            self.running_var *= 1.0 - m
            self.running_var += m * var * (n / (n - 1.0))
            self._xhat = xhat
            self._inv = inv
            self._n = n
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[:, None]) * inv[:, None]
        return self.gamma[:, None] * xhat + self.beta[:, None]

    def backward(self, gy):
        xhat = self._xhat
        n = self._n
        self.gbeta = gy.sum(axis=(0, 2))
        self.ggamma = (gy * xhat).sum(axis=(0, 2))
        coef = (self.gamma * self._inv)[:, None]
        return coef * (gy - (self.gbeta[:, None] + xhat * self.ggamma[:, None]) / n)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def gradients(self):
        return [self.ggamma, self.gbeta]

    def state(self):
        return [("gamma", self.gamma), ("beta", self.beta),
                ("running_mean", self.running_mean),
                ("running_var", self.running_var)]


class ReLU:
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, gy):
        return gy * self._mask

    def parameters(self):
        return []


class Sigmoid:
    def forward(self, x, training=False):
        self._y = expit(x)
        return self._y

    def backward(self, gy):
        return gy * self._y * (1.0 - self._y)

    def parameters(self):
        return []


class Dropout:
    """Inverted dropout; identity when not training or p == 0."""

    def __init__(self, p, rng=None):
        if not 0.0 <= p < 1.0:
            raise ValueError("p must lie in [0, 1)")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng()

    def forward(self, x, training=False):
        if not training or self.p == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.p
        self._mask = (self.rng.random(x.shape) >= self.p).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, gy):
        if self._mask is None:
            return gy
        return gy * self._mask

    def parameters(self):
        return []


def bce_with_logits(logits, targets):
    """Mean binary cross entropy over all cells, from logits.

    Uses the max(z,0) - z*t + log1p(exp(-|z|)) form, stable for large
    |z|.  Returns (loss, dloss/dlogits).
    """
    z = logits
    t = targets
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    grad = (expit(z) - t) / z.size
    return float(loss.mean()), grad.astype(z.dtype)


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("got %d grads for %d params"
                             % (len(grads), len(self.params)))
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = np.asarray(g, dtype=p.dtype)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
