"""Toy differentiable volumetric segmenters.

Three architectures with distinct inductive biases stand in for the CNN,
transformer and state-space families:

``conv-seg``
    three 3x3x3 convolutions (1 -> 8 -> 16 -> C) with ReLU in between.
``mix-seg``
    4x4x4 patch embedding, one single-head global attention layer over the
    patch tokens with a residual connection, tanh, per-patch linear decoder
    plus a per-voxel linear skip.
``scan-seg``
    a 3x3x3 convolutional stem (1 -> 8, ReLU), then gated linear recurrences
    with a SiLU input branch along forward and reversed raster scans in three
    orientations (each axis in turn contiguous), a skip of the stem features,
    tanh and a per-voxel linear decoder.

Every model exposes ``forward`` returning ``(C, H, W, D)`` logits and
``backward`` returning gradients w.r.t. the input and the parameters. All
arithmetic is float64.
"""
import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError, UnsupportedModelError
from .losses import get_loss
from .signal import assemble_patches, partition_patches
from .volumes import check_labels, check_same_shape


def _normal(rng, shape, fan_in):
    return rng.standard_normal(shape) / np.sqrt(fan_in)


class SegModel:
    """Base class: parameters live in an ordered ``dict`` of float64 arrays."""

    arch = None

    def __init__(self, num_classes, window_shape, params, seed=0):
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        self.num_classes = int(num_classes)
        self.window_shape = tuple(int(n) for n in window_shape)
        self.seed = int(seed)
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def __repr__(self):
        return (
            f"{type(self).__name__}(num_classes={self.num_classes}, "
            f"window_shape={self.window_shape}, n_params={self.n_params})"
        )

    @property
    def n_params(self):
        return sum(v.size for v in self.params.values())

    def param_vector(self):
        return np.concatenate([v.ravel() for v in self.params.values()])

    def with_params(self, vector):
        """Return a copy of this model holding the parameters in ``vector``."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {vector.size}")
        params, i = {}, 0
        for name, v in self.params.items():
            params[name] = vector[i:i + v.size].reshape(v.shape).copy()
            i += v.size
        return type(self)(self.num_classes, self.window_shape, params, seed=self.seed)

    def check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeError(f"input must be a 3D volume, got shape {x.shape}")
        check_same_shape(x.shape, self.window_shape, "input and model window")
        return x

    def forward(self, x, return_cache=False):
        raise NotImplementedError

    def backward(self, cache, grad_logits, need_params=True):
        raise UnsupportedModelError(f"{type(self).__name__} has no registered backward rule")

    def __call__(self, x):
        return self.forward(x)

    def _checked(self, x, y):
        x = self.check_input(x)
        y = check_labels(y, self.num_classes)
        check_same_shape(x.shape, y.shape, "input and label shapes")
        return x, y

    def loss(self, x, y, kind="soft-dice"):
        x, y = self._checked(x, y)
        value, _ = get_loss(kind)(self.forward(x), y)
        return float(value)

    def loss_and_grad(self, x, y, kind="soft-dice"):
        """Loss value and its gradient w.r.t. the input volume."""
        x, y = self._checked(x, y)
        logits, cache = self.forward(x, return_cache=True)
        loss, dlogits = get_loss(kind)(logits, y)
        dx, _ = self.backward(cache, dlogits, need_params=False)
        return float(loss), dx


# --------------------------------------------------------------------------
# 3D convolution on a flattened padded grid


def _offsets(shape):
    # flat offsets of the 27 taps on the zero-padded grid
    _, w, d = (n + 2 for n in shape)
    return [(a * w + b) * d + c for a in range(3) for b in range(3) for c in range(3)]


def _pad_flat(x):
    c = x.shape[0]
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1))).reshape(c, -1)


def _conv(x, w, b):
    """3x3x3 convolution with zero padding 1, (Cin, H, W, D) -> (Cout, H, W, D)."""
    # outputs are computed on the padded grid so every tap is a contiguous slice
    cin, h, wd, d = x.shape
    cout = w.shape[0]
    xp = _pad_flat(x)
    offs = _offsets(x.shape[1:])
    m = xp.shape[1] - offs[-1]
    out = np.zeros((cout, xp.shape[1]))
    if cin < 4:
        # tiny inner dimension: one GEMM over gathered taps is faster
        cols = np.empty((27, cin, m))
        for t, off in enumerate(offs):
            cols[t] = xp[:, off:off + m]
        taps = w.reshape(cout, cin, 27).transpose(0, 2, 1).reshape(cout, 27 * cin)
        np.matmul(taps, cols.reshape(27 * cin, m), out=out[:, :m])
    else:
        taps = np.ascontiguousarray(w.reshape(cout, cin, 27).transpose(2, 0, 1))
        acc = out[:, :m]
        tmp = np.empty((cout, m))
        for t, off in enumerate(offs):
            np.matmul(taps[t], xp[:, off:off + m], out=tmp)
            acc += tmp
    out = out.reshape(cout, h + 2, wd + 2, d + 2)[:, :h, :wd, :d]
    return out + b[:, None, None, None]


def _conv_backward(x, w, gout, need_input=True, need_params=True):
    cin, h, wd, d = x.shape
    cout = w.shape[0]
    dw = db = dx = None
    if need_params:
        xp = _pad_flat(x)
        offs = _offsets(x.shape[1:])
        m = xp.shape[1] - offs[-1]
        grid = np.zeros((cout, h + 2, wd + 2, d + 2))
        grid[:, :h, :wd, :d] = gout
        g = grid.reshape(cout, -1)[:, :m]
        dw = np.empty((27, cout, cin))
        for t, off in enumerate(offs):
            np.matmul(g, xp[:, off:off + m].T, out=dw[t])
        dw = dw.transpose(1, 2, 0).reshape(w.shape)
        db = gout.sum(axis=(1, 2, 3))
    if need_input:
        wt = np.flip(w, axis=(2, 3, 4)).transpose(1, 0, 2, 3, 4)
        dx = _conv(gout, wt, np.zeros(wt.shape[0]))
    return dx, dw, db


class ConvSeg(SegModel):
    arch = "conv-seg"
    widths = (1, 8, 16)

    @classmethod
    def init_params(cls, num_classes, window_shape, rng):
        chans = cls.widths + (num_classes,)
        params = {}
        for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
            params[f"w{i}"] = _normal(rng, (cout, cin, 3, 3, 3), 27 * cin) * np.sqrt(2.0)
            params[f"b{i}"] = np.zeros(cout)
        return params

    def forward(self, x, return_cache=False):
        x = self.check_input(x)
        p = self.params
        a0 = x[None]
        z0 = _conv(a0, p["w0"], p["b0"])
        a1 = np.maximum(z0, 0.0)
        z1 = _conv(a1, p["w1"], p["b1"])
        a2 = np.maximum(z1, 0.0)
        logits = _conv(a2, p["w2"], p["b2"])
        if return_cache:
            return logits, (a0, z0, a1, z1, a2)
        return logits

    def backward(self, cache, grad_logits, need_params=True):
        a0, z0, a1, z1, a2 = cache
        p = self.params
        grads = {}
        g2, grads["w2"], grads["b2"] = _conv_backward(a2, p["w2"], grad_logits, need_params=need_params)
        g2 = g2 * (z1 > 0)
        g1, grads["w1"], grads["b1"] = _conv_backward(a1, p["w1"], g2, need_params=need_params)
        g1 = g1 * (z0 > 0)
        g0, grads["w0"], grads["b0"] = _conv_backward(a0, p["w0"], g1, need_params=need_params)
        return g0[0], ({k: grads[k] for k in p} if need_params else None)


class MixSeg(SegModel):
    arch = "mix-seg"
    patch = 4
    dim = 64
    key_dim = 16

    @classmethod
    def init_params(cls, num_classes, window_shape, rng):
        if any(n % cls.patch for n in window_shape):
            raise ConfigError(f"mix-seg needs window axes divisible by {cls.patch}, got {tuple(window_shape)}")
        t, d, dk = cls.patch ** 3, cls.dim, cls.key_dim
        return {
            "w_embed": _normal(rng, (t, d), t),
            "b_embed": np.zeros(d),
            "w_query": _normal(rng, (d, dk), d),
            "w_key": _normal(rng, (d, dk), d),
            "w_value": _normal(rng, (d, d), d),
            "w_out": _normal(rng, (d, d), d) * 0.5,
            "w_dec": _normal(rng, (d, num_classes * t), d),
            "b_dec": np.zeros(num_classes * t),
            "w_skip": rng.standard_normal(num_classes),
        }

    def check_input(self, x):
        x = super().check_input(x)
        if any(n % self.patch for n in x.shape):
            raise ShapeError(f"mix-seg input axes must be divisible by {self.patch}, got {x.shape}")
        return x

    def forward(self, x, return_cache=False):
        x = self.check_input(x)
        p = self.params
        tokens = partition_patches(x, self.patch).reshape(-1, self.patch ** 3) - 0.5
        e = tokens @ p["w_embed"] + p["b_embed"]
        q = e @ p["w_query"]
        k = e @ p["w_key"]
        v = e @ p["w_value"]
        s = q @ k.T / np.sqrt(self.key_dim)
        s = s - s.max(axis=1, keepdims=True)
        att = np.exp(s)
        att /= att.sum(axis=1, keepdims=True)
        o = att @ v
        h = np.tanh(e + o @ p["w_out"])
        c, pp = self.num_classes, self.patch
        out = (h @ p["w_dec"] + p["b_dec"]).reshape(-1, c, pp ** 3)
        out = out + p["w_skip"][:, None] * tokens[:, None, :]
        per_class = out.reshape(-1, c, pp, pp, pp).transpose(1, 0, 2, 3, 4)
        logits = np.stack([assemble_patches(per_class[i], x.shape) for i in range(c)])
        if return_cache:
            return logits, (tokens, e, q, k, v, att, o, h, x.shape)
        return logits

    def backward(self, cache, grad_logits, need_params=True):
        tokens, e, q, k, v, att, o, h, shape = cache
        p = self.params
        c, pp = self.num_classes, self.patch
        dout = np.stack([partition_patches(grad_logits[i], pp) for i in range(c)], axis=1)
        dout = dout.reshape(dout.shape[0], c, -1)
        g = {"w_skip": np.einsum("pcv,pv->c", dout, tokens)}
        dskip = np.einsum("pcv,c->pv", dout, p["w_skip"])
        dout = dout.reshape(dout.shape[0], -1)
        g["w_dec"] = h.T @ dout
        g["b_dec"] = dout.sum(axis=0)
        dz = (dout @ p["w_dec"].T) * (1.0 - h * h)
        g["w_out"] = o.T @ dz
        do = dz @ p["w_out"].T
        de = dz.copy()
        datt = do @ v.T
        dv = att.T @ do
        ds = att * (datt - (datt * att).sum(axis=1, keepdims=True)) / np.sqrt(self.key_dim)
        dq = ds @ k
        dk = ds.T @ q
        g["w_value"] = e.T @ dv
        g["w_query"] = e.T @ dq
        g["w_key"] = e.T @ dk
        de += dv @ p["w_value"].T + dq @ p["w_query"].T + dk @ p["w_key"].T
        g["w_embed"] = tokens.T @ de
        g["b_embed"] = de.sum(axis=0)
        dtokens = de @ p["w_embed"].T + dskip
        dx = assemble_patches(dtokens.reshape(-1, pp, pp, pp), shape)
        return dx, ({name: g[name] for name in p} if need_params else None)


def _sigmoid(z):
    out = np.tanh(0.5 * z)
    out += 1.0
    out *= 0.5
    return out


class ScanSeg(SegModel):
    arch = "scan-seg"
    width = 8
    # (name of the contiguous axis, transpose that makes it the last axis)
    orientations = (("d", (0, 1, 2)), ("h", (1, 2, 0)), ("w", (2, 0, 1)))
    directions = ("fwd", "bwd")

    @classmethod
    def _streams(cls):
        return [(f"{axis}_{d}", perm, d) for axis, perm in cls.orientations for d in cls.directions]

    @classmethod
    def init_params(cls, num_classes, window_shape, rng):
        k = cls.width
        params = {
            "w_stem": _normal(rng, (k, 1, 3, 3, 3), 27) * np.sqrt(2.0),
            "b_stem": np.zeros(k),
        }
        for key, _, _ in cls._streams():
            params[f"w_in_{key}"] = _normal(rng, (k, k), k)
            params[f"b_in_{key}"] = np.zeros(k)
            params[f"w_gate_{key}"] = _normal(rng, (k, k), k)
            params[f"b_gate_{key}"] = rng.uniform(0.0, 2.0, k)
        n_feat = k * (1 + len(cls._streams()))
        params["w_dec"] = _normal(rng, (n_feat, num_classes), n_feat)
        params["b_dec"] = np.zeros(num_classes)
        return params

    @staticmethod
    def _to_stream(v, perm):
        # canonical (H, W, D, c) -> flat scan order along the last axis of perm
        return np.ascontiguousarray(v.transpose(perm + (3,))).reshape(-1, v.shape[3])

    @staticmethod
    def _from_stream(t, shape, perm):
        inv = tuple(np.argsort(perm))
        t = t.reshape(tuple(shape[i] for i in perm) + (t.shape[1],))
        return t.transpose(inv + (3,)).reshape(-1, t.shape[3])

    def _projection(self, kind, axis):
        # both directions of one orientation side by side: [fwd | bwd]
        p = self.params
        keys = [f"{kind}_{axis}_{d}" for d in self.directions]
        return (np.concatenate([p[f"w_{key}"] for key in keys], axis=1),
                np.concatenate([p[f"b_{key}"] for key in keys]))

    def forward(self, x, return_cache=False):
        x = self.check_input(x)
        p = self.params
        k = self.width
        z_stem = _conv(x[None], p["w_stem"], p["b_stem"])
        f = np.maximum(z_stem, 0.0).transpose(1, 2, 3, 0)  # (H, W, D, k)
        feat = np.empty((f[..., 0].size, k * (1 + len(self._streams()))))
        feat[:, :k] = f.reshape(-1, k)
        streams = []
        for o, (axis, perm) in enumerate(self.orientations):
            fs = self._to_stream(f, perm)
            w_in, b_in = self._projection("in", axis)
            w_gate, b_gate = self._projection("gate", axis)
            z = fs @ w_in + b_in
            sz = _sigmoid(z)
            a = _sigmoid(fs @ w_gate + b_gate)
            # scan of silu(z) under gate a; first k columns forward, last k backward
            h = kernels.gated_scan(z, sz, a, k)
            streams.append((fs, z, sz, a, h))
            feat[:, k * (1 + 2 * o):k * (3 + 2 * o)] = self._from_stream(h, x.shape, perm)
        np.tanh(feat, out=feat)
        out = feat @ p["w_dec"] + p["b_dec"]
        logits = out.T.reshape((self.num_classes,) + x.shape)
        if return_cache:
            return logits, (x, z_stem, feat, streams)
        return logits

    def backward(self, cache, grad_logits, need_params=True):
        x, z_stem, feat, streams = cache
        p = self.params
        k = self.width
        dout = grad_logits.reshape(self.num_classes, -1).T
        g = {"w_dec": feat.T @ dout, "b_dec": dout.sum(axis=0)}
        dpre = dout @ p["w_dec"].T
        dtanh = feat * feat
        np.subtract(1.0, dtanh, out=dtanh)
        dpre *= dtanh
        df = dpre[:, :k].copy()
        for o, ((axis, perm), (fs, z, sz, a, h)) in enumerate(zip(self.orientations, streams)):
            dh = self._to_stream(dpre[:, k * (1 + 2 * o):k * (3 + 2 * o)].reshape(x.shape + (2 * k,)), perm)
            dz, dgate = kernels.gated_scan_backward(z, sz, a, h, dh, k)
            w_in, _ = self._projection("in", axis)
            w_gate, _ = self._projection("gate", axis)
            if need_params:
                for kind, dpar in (("in", dz), ("gate", dgate)):
                    gw, gb = fs.T @ dpar, dpar.sum(axis=0)
                    for n, d in enumerate(self.directions):
                        g[f"w_{kind}_{axis}_{d}"] = gw[:, k * n:k * (n + 1)]
                        g[f"b_{kind}_{axis}_{d}"] = gb[k * n:k * (n + 1)]
            df += self._from_stream(dz @ w_in.T + dgate @ w_gate.T, x.shape, perm)
        dz_stem = df.T.reshape((k,) + x.shape) * (z_stem > 0)
        dx, g["w_stem"], g["b_stem"] = _conv_backward(x[None], p["w_stem"], dz_stem, need_params=need_params)
        return dx[0], ({name: g[name] for name in p} if need_params else None)


ARCHITECTURES = {cls.arch: cls for cls in (ConvSeg, MixSeg, ScanSeg)}


def build_model(arch, num_classes, window_shape, seed=0):
    """Deterministically initialise a toy segmenter."""
    try:
        cls = ARCHITECTURES[arch]
    except KeyError:
        raise ConfigError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
    window_shape = tuple(int(n) for n in window_shape)
    rng = np.random.default_rng(seed)
    params = cls.init_params(num_classes, window_shape, rng)
    # store float32-representable parameters so checkpoints round-trip exactly
    params = {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}
    return cls(num_classes, window_shape, params, seed=seed)


def loss_value(model, x, y, kind="soft-dice", weight=1.0):
    return weight * model.loss(x, y, kind)


def input_gradient(model, x, y, kind="soft-dice", weight=1.0):
    """Exact reverse-mode gradient of ``loss_value`` w.r.t. the input volume."""
    _, dx = model.loss_and_grad(x, y, kind)
    return weight * dx
