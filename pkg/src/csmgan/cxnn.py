"""Complex-valued network layers in real representation.

Every complex quantity is carried as a pair of real planes (``re``, ``im``).
A complexified linear map with real parameter arrays ``p_r``, ``p_i`` acts as
the block matrix ``[[L(p_r), -L(p_i)], [L(p_i), L(p_r)]]`` on ``(x_r, x_i)``.

Layers keep the input of their most recent forward pass and compute exact
reverse-mode gradients from it. Parameter gradients are written to
``layer.grads`` (summed over the batch), input gradients are returned.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "ComplexTensor",
    "Layer",
    "ComplexLinear",
    "FullConv",
    "FullConvTranspose",
    "ModReLU",
    "LeakyCardioid",
    "Hermitianize",
    "SplitSigmoidMean",
    "Sequential",
    "ActivationSpec",
    "make_activation",
    "modrelu",
    "leaky_cardioid",
    "split_sigmoid_mean",
    "complex_linear_forward",
    "full_conv_forward",
    "full_conv_transpose",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class ComplexTensor:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=float)
        self.im = np.asarray(self.im, dtype=float)
        if self.re.shape != self.im.shape:
            raise ValueError(f"real/imag shape mismatch {self.re.shape} vs {self.im.shape}")

    @classmethod
    def from_complex(cls, z) -> "ComplexTensor":
        z = np.asarray(z)
        return cls(np.real(z).astype(float), np.imag(z).astype(float))

    @classmethod
    def zeros(cls, shape) -> "ComplexTensor":
        return cls(np.zeros(shape), np.zeros(shape))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def reshape(self, *shape) -> "ComplexTensor":
        return ComplexTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def __getitem__(self, idx) -> "ComplexTensor":
        return ComplexTensor(self.re[idx], self.im[idx])

    def __add__(self, other: "ComplexTensor") -> "ComplexTensor":
        return ComplexTensor(self.re + other.re, self.im + other.im)

    @staticmethod
    def concat(parts: Iterable["ComplexTensor"], axis: int = 0) -> "ComplexTensor":
        parts = list(parts)
        return ComplexTensor(np.concatenate([p.re for p in parts], axis),
                             np.concatenate([p.im for p in parts], axis))


def _as_ct(x) -> ComplexTensor:
    return x if isinstance(x, ComplexTensor) else ComplexTensor.from_complex(x)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Layer:
    """Base class: parameter-free unless ``params`` is filled in."""

    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        raise NotImplementedError

    def backward(self, grad: ComplexTensor) -> ComplexTensor:
        raise NotImplementedError

    def _saved(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def __call__(self, x):
        return self.forward(_as_ct(x))


class ComplexLinear(Layer):
    """Bias-free complex dense layer on the last axis.

    Parameters ``p_r`` and ``p_i`` have shape ``(fan_in, fan_out)``; the layer
    computes ``x @ (p_r + i p_i)``.
    """

    def __init__(self, fan_in: int, fan_out: int, rng=None, name: str = "dense"):
        super().__init__()
        self.fan_in, self.fan_out = int(fan_in), int(fan_out)
        self.name = name
        # complex weight variance 1/fan_in split evenly over the two planes
        std = np.sqrt(0.5 / self.fan_in)
        rng = np.random.default_rng() if rng is None else rng
        self.params["p_r"] = rng.normal(0.0, std, (self.fan_in, self.fan_out))
        self.params["p_i"] = rng.normal(0.0, std, (self.fan_in, self.fan_out))

    def _flat_in(self, x: ComplexTensor) -> ComplexTensor:
        if x.shape[-1] != self.fan_in:
            raise ValueError(f"{self.name}: expected last axis {self.fan_in}, got {x.shape}")
        return x

    def forward(self, x):
        x = self._flat_in(_as_ct(x))
        wr, wi = self.params["p_r"], self.params["p_i"]
        self._cache = x
        return ComplexTensor(x.re @ wr - x.im @ wi, x.im @ wr + x.re @ wi)

    def backward(self, grad):
        x = self._saved()
        wr, wi = self.params["p_r"], self.params["p_i"]
        xr = x.re.reshape(-1, self.fan_in)
        xi = x.im.reshape(-1, self.fan_in)
        gr = grad.re.reshape(-1, self.fan_out)
        gi = grad.im.reshape(-1, self.fan_out)
        self.grads["p_r"] = xr.T @ gr + xi.T @ gi
        self.grads["p_i"] = xr.T @ gi - xi.T @ gr
        return ComplexTensor(grad.re @ wr.T + grad.im @ wi.T, grad.im @ wr.T - grad.re @ wi.T)

    def output_shape(self, in_shape):
        return tuple(in_shape[:-1]) + (self.fan_out,)


class FullConv(ComplexLinear):
    """Complex convolution whose kernel covers the whole ``(H, W)`` input.

    With trivial stride and no padding the output is ``(1, 1, n_filters)``, which
    is the same as a dense map from the flattened ``H*W*C`` input.
    """

    def __init__(self, in_shape, n_filters: int, rng=None, name: str = "conv"):
        self.in_shape = tuple(int(s) for s in in_shape)
        super().__init__(int(np.prod(self.in_shape)), n_filters, rng, name)

    def forward(self, x):
        x = _as_ct(x)
        if tuple(x.shape[1:]) != self.in_shape:
            raise ValueError(f"{self.name}: expected input {self.in_shape}, got {x.shape[1:]}")
        y = super().forward(x.reshape(x.shape[0], self.fan_in))
        return y.reshape(x.shape[0], 1, 1, self.fan_out)

    def backward(self, grad):
        n = grad.shape[0]
        g = super().backward(grad.reshape(n, self.fan_out))
        return g.reshape((n,) + self.in_shape)

    def output_shape(self, in_shape):
        return (1, 1, self.fan_out)


class FullConvTranspose(Layer):
    """Transposed full-kernel convolution ``(1, 1, n_filters) -> out_shape``.

    The kernel is stored like the forward convolution's, ``(H*W*C, n_filters)``,
    and applied transposed, so sharing a kernel with :class:`FullConv` gives the
    map ``A^T`` for the convolution ``A``.
    """

    def __init__(self, n_filters: int, out_shape, rng=None, name: str = "convT"):
        super().__init__()
        self.name = name
        self.out_shape = tuple(int(s) for s in out_shape)
        self.n_filters = int(n_filters)
        fan_out = int(np.prod(self.out_shape))
        std = np.sqrt(0.5 / self.n_filters)
        rng = np.random.default_rng() if rng is None else rng
        self.params["p_r"] = rng.normal(0.0, std, (fan_out, self.n_filters))
        self.params["p_i"] = rng.normal(0.0, std, (fan_out, self.n_filters))

    def forward(self, x):
        x = _as_ct(x)
        n = x.shape[0]
        xr = x.re.reshape(n, self.n_filters)
        xi = x.im.reshape(n, self.n_filters)
        self._cache = (xr, xi)
        wr, wi = self.params["p_r"], self.params["p_i"]
        yr = xr @ wr.T - xi @ wi.T
        yi = xi @ wr.T + xr @ wi.T
        return ComplexTensor(yr.reshape((n,) + self.out_shape), yi.reshape((n,) + self.out_shape))

    def backward(self, grad):
        xr, xi = self._saved()
        n = xr.shape[0]
        gr = grad.re.reshape(n, -1)
        gi = grad.im.reshape(n, -1)
        wr, wi = self.params["p_r"], self.params["p_i"]
        self.grads["p_r"] = gr.T @ xr + gi.T @ xi
        self.grads["p_i"] = gi.T @ xr - gr.T @ xi
        dxr = gr @ wr + gi @ wi
        dxi = gi @ wr - gr @ wi
        return ComplexTensor(dxr.reshape(n, 1, 1, self.n_filters), dxi.reshape(n, 1, 1, self.n_filters))

    def output_shape(self, in_shape):
        return self.out_shape


class ModReLU(Layer):
    """``ReLU(|z| + b) z / |z|``; zero at ``z = 0`` and zero gradient at the kink."""

    def __init__(self, b: float):
        super().__init__()
        self.b = float(b)

    def forward(self, x):
        x = _as_ct(x)
        r = np.hypot(x.re, x.im)
        active = (r + self.b > 0.0) & (r > 0.0)
        r_safe = np.where(active, r, 1.0)
        scale = np.where(active, 1.0 + self.b / r_safe, 0.0)
        self._cache = (x, r_safe, active, scale)
        return ComplexTensor(scale * x.re, scale * x.im)

    def backward(self, grad):
        x, r, active, scale = self._saved()
        # d(scale)/dx = -b x / r^3
        proj = np.where(active, (grad.re * x.re + grad.im * x.im) * (-self.b / r**3), 0.0)
        return ComplexTensor(scale * grad.re + proj * x.re, scale * grad.im + proj * x.im)


class LeakyCardioid(Layer):
    """``((1 + alpha) + cos(arg z)) z / 2``.

    At ``z = 0`` the gradient is taken as the linear part ``(1 + alpha) / 2``.
    """

    def __init__(self, alpha: float):
        super().__init__()
        if alpha < 0:
            raise ValueError("cardioid alpha must be >= 0")
        self.alpha = float(alpha)

    def forward(self, x):
        x = _as_ct(x)
        r = np.hypot(x.re, x.im)
        nz = r > 0.0
        r_safe = np.where(nz, r, 1.0)
        cos = np.where(nz, x.re / r_safe, 0.0)
        scale = 0.5 * ((1.0 + self.alpha) + cos)
        self._cache = (x, r_safe, nz, scale)
        return ComplexTensor(scale * x.re, scale * x.im)

    def backward(self, grad):
        x, r, nz, scale = self._saved()
        base = 0.5 * (1.0 + self.alpha)
        scale = np.where(nz, scale, base)
        # d(cos)/dx = y^2 / r^3, d(cos)/dy = -x y / r^3
        r3 = r**3
        dcos_dx = np.where(nz, x.im * x.im / r3, 0.0)
        dcos_dy = np.where(nz, -x.re * x.im / r3, 0.0)
        proj = 0.5 * (grad.re * x.re + grad.im * x.im)
        return ComplexTensor(scale * grad.re + proj * dcos_dx, scale * grad.im + proj * dcos_dy)


class Hermitianize(Layer):
    """``(C + C^H) / 2`` over the first two feature axes of ``(N, n, n, K)``."""

    def forward(self, x):
        x = _as_ct(x)
        self._cache = True
        return ComplexTensor(0.5 * (x.re + np.swapaxes(x.re, 1, 2)),
                             0.5 * (x.im - np.swapaxes(x.im, 1, 2)))

    def backward(self, grad):
        self._saved()
        # self-adjoint projection
        return ComplexTensor(0.5 * (grad.re + np.swapaxes(grad.re, 1, 2)),
                             0.5 * (grad.im - np.swapaxes(grad.im, 1, 2)))


class SplitSigmoidMean(Layer):
    """Logistic sigmoid on every real and imaginary component, averaged per sample.

    Output is a real array of shape ``(N,)``; ``backward`` takes ``dL/d out`` of
    the same shape.
    """

    def forward(self, x):
        x = _as_ct(x)
        n = x.shape[0]
        sr = _sigmoid(x.re.reshape(n, -1))
        si = _sigmoid(x.im.reshape(n, -1))
        self._cache = (x.shape, sr, si)
        return (sr.sum(axis=1) + si.sum(axis=1)) / (2 * sr.shape[1])

    def backward(self, grad):
        shape, sr, si = self._saved()
        g = np.asarray(grad, dtype=float)[:, None] / (2 * sr.shape[1])
        return ComplexTensor((g * sr * (1 - sr)).reshape(shape), (g * si * (1 - si)).reshape(shape))


def _sigmoid(x):
    # numerically safe on both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Sequential(Layer):
    def __init__(self, layers, name: str = "seq"):
        super().__init__()
        self.layers = list(layers)
        self.name = name

    def forward(self, x):
        x = _as_ct(x)
        self.trace = [tuple(x.shape[1:])]
        for layer in self.layers:
            x = layer.forward(x)
            if isinstance(x, ComplexTensor):
                self.trace.append(tuple(x.shape[1:]))
        self._cache = True
        return x

    def backward(self, grad):
        self._saved()
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self) -> dict[str, np.ndarray]:
        """Flat view ``"<layer>/<p_r|p_i>" -> array`` (arrays are shared, not copied)."""
        out = {}
        for layer in self.layers:
            for k, v in layer.params.items():
                out[f"{layer.name}/{k}"] = v
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for k in layer.params:
                if k not in layer.grads:
                    raise RuntimeError(f"no gradient for {layer.name}/{k}; run backward first")
                out[f"{layer.name}/{k}"] = layer.grads[k]
        return out

    def param_count(self) -> int:
        return sum(v.size for v in self.named_params().values())


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActivationSpec:
    kind: str = "cardioid"
    b: float = -0.25
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in ("modrelu", "cardioid"):
            raise ValueError(f"unknown activation kind {self.kind!r}")

    def describe(self) -> str:
        return f"modReLU(b={self.b:g})" if self.kind == "modrelu" else f"cardioid(alpha={self.alpha:g})"

    def to_dict(self) -> dict:
        if self.kind == "modrelu":
            return {"kind": "modrelu", "b": self.b}
        return {"kind": "cardioid", "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "ActivationSpec":
        if d["kind"] == "modrelu":
            return cls(kind="modrelu", b=float(d["b"]))
        return cls(kind="cardioid", alpha=float(d["alpha"]))


def make_activation(spec: ActivationSpec) -> Layer:
    if spec.kind == "modrelu":
        return ModReLU(spec.b)
    return LeakyCardioid(spec.alpha)


def modrelu(z, b: float) -> np.ndarray:
    """Elementwise modReLU on a complex array."""
    return ModReLU(b).forward(_as_ct(np.asarray(z))).to_complex()


def leaky_cardioid(z, alpha: float) -> np.ndarray:
    return LeakyCardioid(alpha).forward(_as_ct(np.asarray(z))).to_complex()


def split_sigmoid_mean(z) -> float:
    z = np.asarray(z, dtype=complex)
    return float(SplitSigmoidMean().forward(ComplexTensor.from_complex(z.reshape(1, -1)))[0])


def complex_linear_forward(p_r, p_i, x) -> np.ndarray:
    """Apply ``(L(p_r) + i L(p_i))`` with ``L(p)`` the matrix ``p`` (``fan_out x fan_in``)."""
    p_r = np.asarray(p_r, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    if p_r.shape != p_i.shape:
        raise ValueError("p_r and p_i must have identical shapes")
    layer = ComplexLinear.__new__(ComplexLinear)
    Layer.__init__(layer)
    layer.name = "dense"
    layer.fan_out, layer.fan_in = p_r.shape
    layer.params = {"p_r": p_r.T, "p_i": p_i.T}
    x = np.asarray(x)
    return layer.forward(ComplexTensor.from_complex(x.reshape(1, -1))).to_complex()[0]


def full_conv_forward(p_r, p_i, x) -> np.ndarray:
    """Full-kernel convolution of one ``(H, W, C)`` input with kernels ``(H, W, C, n)``."""
    x = np.asarray(x)
    p_r = np.asarray(p_r, dtype=float)
    if p_r.shape[:-1] != x.shape:
        raise ValueError(f"kernel {p_r.shape} does not cover input {x.shape}")
    layer = FullConv.__new__(FullConv)
    Layer.__init__(layer)
    layer.name = "conv"
    layer.in_shape = x.shape
    layer.fan_in = x.size
    layer.fan_out = p_r.shape[-1]
    layer.params = {"p_r": p_r.reshape(x.size, -1), "p_i": np.asarray(p_i, dtype=float).reshape(x.size, -1)}
    return layer.forward(ComplexTensor.from_complex(x[None])).to_complex()[0]


def full_conv_transpose(p_r, p_i, y) -> np.ndarray:
    """Transposed full-kernel convolution ``(1, 1, n) -> (H, W, C)`` with kernels ``(H, W, C, n)``."""
    p_r = np.asarray(p_r, dtype=float)
    out_shape = p_r.shape[:-1]
    layer = FullConvTranspose.__new__(FullConvTranspose)
    Layer.__init__(layer)
    layer.name = "convT"
    layer.out_shape = out_shape
    layer.n_filters = p_r.shape[-1]
    layer.params = {"p_r": p_r.reshape(-1, layer.n_filters),
                    "p_i": np.asarray(p_i, dtype=float).reshape(-1, layer.n_filters)}
    y = np.asarray(y).reshape(1, 1, 1, -1)
    return layer.forward(ComplexTensor.from_complex(y)).to_complex()[0]


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a dict of named real arrays, updated in place."""

    def __init__(self, lr: float, beta1: float = 0.5, beta2: float = 0.999, epsilon: float = 1e-7):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
            if name not in self.first_moment:
                self.first_moment[name] = np.zeros_like(p)
                self.second_moment[name] = np.zeros_like(p)
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)

    def state_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "epsilon": self.epsilon, "step_count": self.step_count}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"CXCK"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sIQ")


def save_checkpoint(path, blobs: dict[str, tuple[np.ndarray, np.ndarray]], meta: dict) -> None:
    """Write named complex parameter blobs plus a JSON descriptor.

    Layout: magic ``CXCK``, uint32 version, uint64 descriptor length, UTF-8 JSON
    descriptor (``meta`` plus a blob table of name/shape/offset), then each
    blob's real plane followed by its imaginary plane as little-endian float64.
    """
    table = []
    offset = 0
    for name, (re, im) in blobs.items():
        re = np.asarray(re, dtype=float)
        if np.shape(im) != re.shape:
            raise ValueError(f"blob {name}: plane shapes differ")
        table.append({"name": name, "shape": list(re.shape), "offset": offset})
        offset += 16 * re.size
    desc = json.dumps({"meta": meta, "blobs": table}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(desc)))
        fh.write(desc)
        for re, im in blobs.values():
            fh.write(np.ascontiguousarray(re, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(im, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, tuple[np.ndarray, np.ndarray]], dict]:
    with open(path, "rb") as fh:
        raw = fh.read(_CKPT_HEAD.size)
        if len(raw) != _CKPT_HEAD.size:
            raise ValueError("truncated checkpoint header")
        magic, version, n = _CKPT_HEAD.unpack(raw)
        if magic != CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        desc = json.loads(fh.read(n).decode())
        body = fh.read()
    blobs = {}
    for entry in desc["blobs"]:
        size = int(np.prod(entry["shape"]))
        start = entry["offset"]
        if start + 16 * size > len(body):
            raise ValueError(f"truncated blob {entry['name']}")
        re = np.frombuffer(body, "<f8", size, start).reshape(entry["shape"]).astype(float)
        im = np.frombuffer(body, "<f8", size, start + 8 * size).reshape(entry["shape"]).astype(float)
        blobs[entry["name"]] = (re, im)
    return blobs, desc["meta"]
