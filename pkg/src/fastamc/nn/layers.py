"""Layer kernels with hand-written backward passes.

Every layer caches what its backward pass needs during ``forward``; a layer
instance therefore serves one forward/backward pair at a time.  Image-like
tensors are (N, C, H, W) with the time axis last; sequences are (N, T, F).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# upper bound on im2col elements materialised at once
COLS_BUDGET = 1 << 24


class ShapeError(ValueError):
    pass


def sigmoid(x):
    # split form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    kind = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.state = {k: v.astype(dtype) if v.dtype.kind == "f" else v for k, v in self.state.items()}
        self.zero_grad()

    def forward(self, *xs, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, units, rng, dtype=np.float32):
        super().__init__()
        lim = np.sqrt(3.0 / n_in)
        self.params = {"W": rng.uniform(-lim, lim, (n_in, units)).astype(dtype), "b": np.zeros(units, dtype)}
        self.zero_grad()

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.params["W"].shape[0]:
            raise ShapeError(f"dense expects (N, {self.params['W'].shape[0]}), got {x.shape}")
        self.x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] += self.x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return (dout @ self.params["W"].T,)


class Conv2D(Layer):
    """Stride-1 convolution: valid along H, "same" zero padding along W."""

    kind = "conv2d"

    def __init__(self, c_in, filters, kernel, rng, dtype=np.float32, bias=True):
        super().__init__()
        kh, kw = kernel
        lim = np.sqrt(3.0 / (c_in * kh * kw))
        self.kernel = (kh, kw)
        self.params = {"W": rng.uniform(-lim, lim, (filters, c_in, kh, kw)).astype(dtype)}
        if bias:
            self.params["b"] = np.zeros(filters, dtype)
        self.zero_grad()

    def _pad(self, x):
        kw = self.kernel[1]
        left = (kw - 1) // 2
        return np.pad(x, ((0, 0), (0, 0), (0, 0), (left, kw - 1 - left)))

    def _cols(self, xp):
        n, c = xp.shape[:2]
        kh, kw = self.kernel
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, c, h', w, kh, kw
        h_out, w_out = win.shape[2], win.shape[3]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * kh * kw), h_out, w_out

    def _chunk(self, x):
        n, c, h, w = x.shape
        per = c * self.kernel[0] * self.kernel[1] * h * w
        return max(1, COLS_BUDGET // max(per, 1))

    def forward(self, x, training=False, rng=None):
        W = self.params["W"]
        if x.ndim != 4 or x.shape[1] != W.shape[1]:
            raise ShapeError(f"conv2d expects (N, {W.shape[1]}, H, W), got {x.shape}")
        if x.shape[2] < self.kernel[0]:
            raise ShapeError(f"conv2d kernel height {self.kernel[0]} exceeds input height {x.shape[2]}")
        self.x = x
        f = W.shape[0]
        wmat = W.reshape(f, -1).T
        xp = self._pad(x)
        outs = []
        step = self._chunk(x)
        for s in range(0, x.shape[0], step):
            cols, h_out, w_out = self._cols(xp[s : s + step])
            out = cols @ wmat
            if "b" in self.params:
                out += self.params["b"]
            outs.append(out.reshape(-1, h_out, w_out, f).transpose(0, 3, 1, 2))
        return np.ascontiguousarray(np.concatenate(outs, axis=0))

    def backward(self, dout):
        W = self.params["W"]
        f, c, kh, kw = W.shape
        wmat = W.reshape(f, -1).T
        xp = self._pad(self.x)
        dxp = np.zeros_like(xp)
        left = (kw - 1) // 2
        step = self._chunk(self.x)
        gW = np.zeros_like(wmat)
        for s in range(0, self.x.shape[0], step):
            cols, h_out, w_out = self._cols(xp[s : s + step])
            d = dout[s : s + step].transpose(0, 2, 3, 1).reshape(-1, f)
            gW += cols.T @ d
            dcols = (d @ wmat.T).reshape(-1, h_out, w_out, c, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    dxp[s : s + step, :, i : i + h_out, j : j + w_out] += dcols[..., i, j].transpose(0, 3, 1, 2)
        self.grads["W"] += gW.T.reshape(W.shape)
        if "b" in self.params:
            self.grads["b"] += dout.sum(axis=(0, 2, 3))
        return (dxp[..., left : left + self.x.shape[3]],)


class MaxPool(Layer):
    """Non-overlapping 1 x pool max pooling along the time axis; a ragged tail is dropped."""

    kind = "maxpool"

    def __init__(self, pool):
        super().__init__()
        self.pool = pool

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"maxpool expects a 4-D input, got {x.shape}")
        n, c, h, w = x.shape
        p = self.pool
        wo = w // p
        if wo == 0:
            raise ShapeError(f"maxpool({p}) on length {w} leaves nothing")
        xr = x[..., : wo * p].reshape(n, c, h, wo, p)
        self.shape = x.shape
        self.arg = xr.argmax(axis=-1)
        return np.take_along_axis(xr, self.arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        n, c, h, w = self.shape
        p = self.pool
        wo = w // p
        dx = np.zeros((n, c, h, wo, p), dtype=dout.dtype)
        np.put_along_axis(dx, self.arg[..., None], dout[..., None], axis=-1)
        full = np.zeros(self.shape, dtype=dout.dtype)
        full[..., : wo * p] = dx.reshape(n, c, h, wo * p)
        return (full,)


class BatchNorm(Layer):
    """Per-channel normalisation (axis 1).

    Running statistics are exponential moving averages started from zero and
    bias-corrected by ``1 - momentum**t``, so after t updates they equal a
    properly weighted average of the batches seen.
    """

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.99, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params = {"gamma": np.ones(channels, dtype), "beta": np.zeros(channels, dtype)}
        self.state = {
            "ema_mean": np.zeros(channels, dtype),
            "ema_var": np.zeros(channels, dtype),
            "steps": np.zeros(1, np.int64),
        }
        self.zero_grad()

    def _axes(self, x):
        return (0,) + tuple(range(2, x.ndim))

    def _bshape(self, x):
        return (1, -1) + (1,) * (x.ndim - 2)

    def running_stats(self):
        t = int(self.state["steps"][0])
        if t == 0:
            return np.zeros_like(self.state["ema_mean"]), np.ones_like(self.state["ema_var"])
        corr = 1.0 - self.momentum**t
        return self.state["ema_mean"] / corr, self.state["ema_var"] / corr

    def forward(self, x, training=False, rng=None):
        if x.shape[1] != self.params["gamma"].shape[0]:
            raise ShapeError(f"batchnorm expects {self.params['gamma'].shape[0]} channels, got {x.shape}")
        bs = self._bshape(x)
        if training:
            if x.shape[0] < 2:
                raise ShapeError("batchnorm needs a batch of at least 2 in training mode")
            axes = self._axes(x)
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.state["ema_mean"] = (m * self.state["ema_mean"] + (1 - m) * mean).astype(x.dtype)
            self.state["ema_var"] = (m * self.state["ema_var"] + (1 - m) * var).astype(x.dtype)
            self.state["steps"] = self.state["steps"] + 1
        else:
            mean, var = self.running_stats()
        inv = 1.0 / np.sqrt(var + self.eps)
        self.xhat = (x - mean.reshape(bs)) * inv.reshape(bs)
        self.inv = inv
        self.training = training
        return (self.params["gamma"].reshape(bs) * self.xhat + self.params["beta"].reshape(bs)).astype(x.dtype)

    def backward(self, dout):
        axes = self._axes(dout)
        bs = self._bshape(dout)
        self.grads["gamma"] += (dout * self.xhat).sum(axis=axes)
        self.grads["beta"] += dout.sum(axis=axes)
        dxhat = dout * self.params["gamma"].reshape(bs)
        if not self.training:
            return (dxhat * self.inv.reshape(bs),)
        m = dout.size // dout.shape[1]
        dx = (
            dxhat
            - dxhat.sum(axis=axes, keepdims=True) / m
            - self.xhat * (dxhat * self.xhat).sum(axis=axes, keepdims=True) / m
        ) * self.inv.reshape(bs)
        return (dx.astype(dout.dtype),)


def lstm_cell_step(x_t, h_prev, c_prev, params):
    """One LSTM step. ``params`` holds Wx (F, 4U), Wh (U, 4U), b (4U); gate order i, f, g, o.

    Returns ``(h_t, c_t)``.
    """
    h, c, _ = _lstm_step(x_t @ params["Wx"] + params["b"], h_prev, c_prev, params["Wh"])
    return h, c


def _lstm_step(xw_t, h_prev, c_prev, Wh):
    u = h_prev.shape[1]
    z = xw_t + h_prev @ Wh
    i = sigmoid(z[:, :u])
    f = sigmoid(z[:, u : 2 * u])
    g = np.tanh(z[:, 2 * u : 3 * u])
    o = sigmoid(z[:, 3 * u :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return o * tc, c, (i, f, g, o, tc)


class LSTM(Layer):
    kind = "lstm"

    def __init__(self, n_in, units, return_sequences, rng, dtype=np.float32):
        super().__init__()
        self.units, self.return_sequences = units, return_sequences
        lim = 1.0 / np.sqrt(units)
        b = np.zeros(4 * units, dtype)
        b[units : 2 * units] = 1.0  # forget-gate bias
        self.params = {
            "Wx": rng.uniform(-lim, lim, (n_in, 4 * units)).astype(dtype),
            "Wh": rng.uniform(-lim, lim, (units, 4 * units)).astype(dtype),
            "b": b,
        }
        self.zero_grad()

    def forward(self, x, training=False, rng=None):
        Wx = self.params["Wx"]
        if x.ndim != 3 or x.shape[2] != Wx.shape[0]:
            raise ShapeError(f"lstm expects (N, T, {Wx.shape[0]}), got {x.shape}")
        n, t, f = x.shape
        u = self.units
        xw = (x.reshape(n * t, f) @ Wx + self.params["b"]).reshape(n, t, 4 * u)
        h = np.zeros((n, u), x.dtype)
        c = np.zeros((n, u), x.dtype)
        self.x = x
        self.hs, self.cs, self.gates = [h], [c], []
        for step in range(t):
            h, c, gates = _lstm_step(xw[:, step], h, c, self.params["Wh"])
            self.hs.append(h)
            self.cs.append(c)
            self.gates.append(gates)
        if self.return_sequences:
            return np.stack(self.hs[1:], axis=1)
        return h

    def backward(self, dout):
        n, t, f = self.x.shape
        u = self.units
        Wh = self.params["Wh"]
        dz_all = np.empty((n, t, 4 * u), dout.dtype)
        dh_next = np.zeros((n, u), dout.dtype)
        dc_next = np.zeros((n, u), dout.dtype)
        gWh = np.zeros_like(Wh)
        for step in reversed(range(t)):
            i, fg, g, o, tc = self.gates[step]
            dh = dh_next + (dout[:, step] if self.return_sequences else (dout if step == t - 1 else 0.0))
            dc = dh * o * (1 - tc * tc) + dc_next
            dz = dz_all[:, step]
            dz[:, :u] = dc * g * i * (1 - i)
            dz[:, u : 2 * u] = dc * self.cs[step] * fg * (1 - fg)
            dz[:, 2 * u : 3 * u] = dc * i * (1 - g * g)
            dz[:, 3 * u :] = dh * tc * o * (1 - o)
            gWh += self.hs[step].T @ dz
            dh_next = dz @ Wh.T
            dc_next = dc * fg
        dz2 = dz_all.reshape(n * t, 4 * u)
        self.grads["Wx"] += self.x.reshape(n * t, f).T @ dz2
        self.grads["Wh"] += gWh
        self.grads["b"] += dz2.sum(axis=0)
        return ((dz2 @ self.params["Wx"].T).reshape(n, t, f),)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        self.mask = x > 0
        return x * self.mask

    def backward(self, dout):
        return (dout * self.mask,)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False, rng=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self.p = e / e.sum(axis=-1, keepdims=True)
        return self.p

    def backward(self, dout):
        p = self.p
        return (p * (dout - (dout * p).sum(axis=-1, keepdims=True)),)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False, rng=None):
        self.shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return (dout.reshape(self.shape),)


class Sequence(Layer):
    """(N, C, H, W) -> (N, W, C*H): time-major sequence for recurrent layers."""

    kind = "sequence"

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"sequence expects a 4-D input, got {x.shape}")
        self.shape = x.shape
        n, c, h, w = x.shape
        return np.ascontiguousarray(x.transpose(0, 3, 1, 2).reshape(n, w, c * h))

    def backward(self, dout):
        n, c, h, w = self.shape
        return (np.ascontiguousarray(dout.reshape(n, w, c, h).transpose(0, 2, 3, 1)),)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        self.mask = None
        if not training or self.rate <= 0:
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs a random generator")
        keep = 1.0 - self.rate
        self.mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
        return x * self.mask

    def backward(self, dout):
        return (dout if self.mask is None else dout * self.mask,)


class Add(Layer):
    kind = "add"

    def forward(self, *xs, training=False, rng=None):
        if any(x.shape != xs[0].shape for x in xs):
            raise ShapeError(f"add inputs disagree: {[x.shape for x in xs]}")
        self.n = len(xs)
        out = xs[0].copy()
        for x in xs[1:]:
            out += x
        return out

    def backward(self, dout):
        return (dout,) * self.n


class Concat(Layer):
    """Concatenate along the channel axis (axis 1)."""

    kind = "concat"

    def forward(self, *xs, training=False, rng=None):
        if any(x.shape[2:] != xs[0].shape[2:] or x.shape[0] != xs[0].shape[0] for x in xs):
            raise ShapeError(f"concat inputs disagree: {[x.shape for x in xs]}")
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, dout):
        return tuple(np.split(dout, self.splits, axis=1))
