"""Residual CNN for multispectral super-resolution, with hand-written backprop.

Tensors are channels-last numpy arrays, either ``(H, W, C)`` or batched
``(N, H, W, C)``. Kernels are stored ``(f_out, f_in, 3, 3)`` and applied as
plain cross-correlation with one pixel of zero padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvariantViolation, MissingInput, ShapeMismatch, StaleCache
from .resample import upsample_array, upsample_array_transpose

KERNEL_SIZE = 3

# (input_channels, output_channels, scale) of the two supported mappings
VARIANTS = {(10, 6, 2): "T2x", (12, 2, 6): "S6x"}


@dataclass(frozen=True)
class NetworkConfig:
    d: int
    f: int
    input_channels: int = 10
    output_channels: int = 6
    lam: float = 0.1
    scale: int = 2
    upsampling: str = "bilinear"

    def __post_init__(self):
        if self.d < 1 or self.f < 1:
            raise InvariantViolation(f"d and f must be >= 1 (d={self.d}, f={self.f})")
        key = (self.input_channels, self.output_channels, self.scale)
        if key not in VARIANTS:
            raise InvariantViolation(f"unsupported (inputs, outputs, scale) combination {key}")
        if not 0.0 < self.lam <= 1.0:
            raise InvariantViolation(f"residual scale must lie in (0, 1], got {self.lam}")
        if self.upsampling not in ("bilinear", "bicubic"):
            raise InvariantViolation(f"unknown upsampling {self.upsampling!r}")

    @classmethod
    def t2x(cls, d: int = 6, f: int = 128, **kw) -> "NetworkConfig":
        return cls(d, f, 10, 6, scale=2, **kw)

    @classmethod
    def s6x(cls, d: int = 6, f: int = 128, **kw) -> "NetworkConfig":
        return cls(d, f, 12, 2, scale=6, **kw)

    @property
    def variant(self) -> str:
        return VARIANTS[(self.input_channels, self.output_channels, self.scale)]

    @property
    def receptive_radius(self) -> int:
        """Pixels of context each output pixel depends on, per side."""
        return 2 * self.d + 2


@dataclass
class ConvParams:
    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
            raise ShapeMismatch(f"kernel must be (f_out, f_in, 3, 3), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeMismatch(f"bias shape {self.bias.shape} does not match {self.kernel.shape[0]} filters")

    @property
    def f_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def f_in(self) -> int:
        return self.kernel.shape[1]


@dataclass
class NetworkWeights:
    first: ConvParams
    blocks: List[Tuple[ConvParams, ConvParams]]
    last: ConvParams

    def convs(self) -> List[ConvParams]:
        out = [self.first]
        for p1, p2 in self.blocks:
            out += [p1, p2]
        out.append(self.last)
        return out

    def tensors(self) -> List[np.ndarray]:
        """All parameter arrays in declaration order (kernel, bias per layer)."""
        out = []
        for p in self.convs():
            out += [p.kernel, p.bias]
        return out

    @classmethod
    def from_tensors(cls, tensors) -> "NetworkWeights":
        tensors = list(tensors)
        if len(tensors) < 6 or len(tensors) % 4 != 0:
            raise ShapeMismatch(f"cannot build a network from {len(tensors)} tensors")
        convs = [ConvParams(tensors[i], tensors[i + 1]) for i in range(0, len(tensors), 2)]
        blocks = [(convs[i], convs[i + 1]) for i in range(1, len(convs) - 1, 2)]
        return cls(convs[0], blocks, convs[-1])

    def map(self, fn) -> "NetworkWeights":
        return NetworkWeights.from_tensors([fn(t) for t in self.tensors()])

    def astype(self, dtype) -> "NetworkWeights":
        return self.map(lambda t: t.astype(dtype))

    def copy(self) -> "NetworkWeights":
        return self.map(np.copy)

    def check(self, config: NetworkConfig):
        expected = weight_shapes(config)
        got = [t.shape for t in self.tensors()]
        if got != expected:
            raise ShapeMismatch(f"weights do not match config {config}")

    def __eq__(self, other):
        if not isinstance(other, NetworkWeights):
            return NotImplemented
        a, b = self.tensors(), other.tensors()
        return len(a) == len(b) and all(
            x.shape == y.shape and x.dtype == y.dtype and x.tobytes() == y.tobytes() for x, y in zip(a, b)
        )

    __hash__ = None


def weight_shapes(config: NetworkConfig) -> List[tuple]:
    k, f = KERNEL_SIZE, config.f
    shapes = [(f, config.input_channels, k, k), (f,)]
    for _ in range(config.d):
        shapes += [(f, f, k, k), (f,), (f, f, k, k), (f,)]
    shapes += [(config.output_channels, f, k, k), (config.output_channels,)]
    return shapes


def param_count(config: NetworkConfig) -> Tuple[int, int]:
    """Return ``(conv_layers, parameters)`` for ``config``."""
    k2, f, d = KERNEL_SIZE**2, config.f, config.d
    first = k2 * config.input_channels * f + f
    blocks = d * 2 * (k2 * f * f + f)
    last = k2 * f * config.output_channels + config.output_channels
    return 2 * d + 2, first + blocks + last


def init_he_uniform(config: NetworkConfig, seed: int, dtype=np.float32) -> NetworkWeights:
    """Kernels uniform in +-sqrt(6 / fan_in) with fan_in = f_in * 3 * 3; zero biases."""
    rng = np.random.default_rng(seed)
    tensors = []
    for shape in weight_shapes(config):
        if len(shape) == 4:
            bound = np.sqrt(6.0 / (shape[1] * KERNEL_SIZE**2))
            tensors.append(rng.uniform(-bound, bound, size=shape).astype(dtype))
        else:
            tensors.append(np.zeros(shape, dtype=dtype))
    return NetworkWeights.from_tensors(tensors)


def zero_weights(config: NetworkConfig, dtype=np.float32) -> NetworkWeights:
    return NetworkWeights.from_tensors([np.zeros(s, dtype=dtype) for s in weight_shapes(config)])


# ---------------------------------------------------------------------------
# primitives


def _batched(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatch(f"expected (H, W, C) or (N, H, W, C), got shape {x.shape}")


def _shifted(xp: np.ndarray, di: int, dj: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(xp[:, di : di + h, dj : dj + w, :]).reshape(-1, xp.shape[-1])


def conv2d_same(x: np.ndarray, p: ConvParams) -> np.ndarray:
    xb, single = _batched(x)
    n, h, w, c = xb.shape
    if c != p.f_in:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {p.f_in}")
    dtype = np.result_type(xb.dtype, p.kernel.dtype)
    xp = np.pad(xb.astype(dtype, copy=False), ((0, 0), (1, 1), (1, 1), (0, 0)))
    # (3, 3, f_in, f_out), contiguous per tap so matmul stays on BLAS
    taps = np.ascontiguousarray(p.kernel.astype(dtype, copy=False).transpose(2, 3, 1, 0))
    out = np.zeros((n * h * w, p.f_out), dtype=dtype)
    for di in range(KERNEL_SIZE):
        for dj in range(KERNEL_SIZE):
            out += _shifted(xp, di, dj, h, w) @ taps[di, dj]
    out += p.bias.astype(dtype, copy=False)
    out = out.reshape(n, h, w, p.f_out)
    return out[0] if single else out


def conv2d_same_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    """Gradients of a same-padded convolution: ``(grad_x, grad_kernel, grad_bias)``."""
    xb, single = _batched(x)
    gb, _ = _batched(grad_out)
    n, h, w, c = xb.shape
    dtype = np.result_type(xb.dtype, p.kernel.dtype, gb.dtype)
    xp = np.pad(xb.astype(dtype, copy=False), ((0, 0), (1, 1), (1, 1), (0, 0)))
    g = gb.astype(dtype, copy=False).reshape(-1, p.f_out)
    taps = np.ascontiguousarray(p.kernel.astype(dtype, copy=False).transpose(2, 3, 0, 1))
    grad_k = np.empty(p.kernel.shape, dtype=dtype)
    grad_xp = np.zeros_like(xp)
    for di in range(KERNEL_SIZE):
        for dj in range(KERNEL_SIZE):
            grad_k[:, :, di, dj] = g.T @ _shifted(xp, di, dj, h, w)
            grad_xp[:, di : di + h, dj : dj + w, :] += (g @ taps[di, dj]).reshape(n, h, w, c)
    grad_b = g.sum(axis=0)
    grad_x = grad_xp[:, 1:-1, 1:-1, :]
    return (grad_x[0] if single else grad_x), grad_k, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def resblock_forward(z: np.ndarray, p1: ConvParams, p2: ConvParams, lam: float) -> np.ndarray:
    for p in (p1, p2):
        if p.f_in != z.shape[-1] or p.f_out != z.shape[-1]:
            raise ShapeMismatch("ResBlock convolutions must map f channels to f channels")
    return lam * conv2d_same(relu(conv2d_same(z, p1)), p2) + z


# ---------------------------------------------------------------------------
# full network


@dataclass
class ForwardCache:
    config: NetworkConfig
    weights: NetworkWeights
    shapes: dict
    x0: np.ndarray
    pre_first: np.ndarray
    block_inputs: List[np.ndarray] = field(default_factory=list)
    block_pre: List[np.ndarray] = field(default_factory=list)
    last_input: Optional[np.ndarray] = None
    single: bool = False


def _check_inputs(config, y_a, y_b, y_c):
    ya, single = _batched(y_a)
    yb, _ = _batched(y_b)
    n, h, w, ca = ya.shape
    if ca != 4:
        raise ShapeMismatch(f"y_a must have 4 bands, got {ca}")
    if yb.shape != (n, h // 2, w // 2, 6) or h % 2 or w % 2:
        raise ShapeMismatch(f"y_b shape {yb.shape} does not match y_a shape {ya.shape}")
    yc = None
    if config.scale == 6:
        if y_c is None:
            raise MissingInput("the 6x network needs the C bands")
        yc, _ = _batched(y_c)
        if yc.shape != (n, h // 6, w // 6, 2) or h % 6 or w % 6:
            raise ShapeMismatch(f"y_c shape {yc.shape} does not match y_a shape {ya.shape}")
    return ya, yb, yc, single


def upsampled_inputs(config: NetworkConfig, y_a, y_b, y_c=None):
    """Return ``(x0, skip)``: the concatenated network input and the skip term."""
    ya, yb, yc, _ = _check_inputs(config, y_a, y_b, y_c)
    kind = config.upsampling
    dtype = ya.dtype
    ub = upsample_array(yb, 2, kind, axes=(1, 2)).astype(dtype)
    parts = [ya, ub]
    skip = ub
    if yc is not None:
        uc = upsample_array(yc, 6, kind, axes=(1, 2)).astype(dtype)
        parts.append(uc)
        skip = uc
    return np.concatenate(parts, axis=-1), skip


def forward_from_x0(config, weights, x0, skip, keep_cache=False):
    """Run the network on an already upsampled/concatenated input."""
    cache = None
    pre = conv2d_same(x0, weights.first)
    z = relu(pre)
    if keep_cache:
        cache = ForwardCache(config, weights, {}, x0, pre)
    for p1, p2 in weights.blocks:
        z1 = conv2d_same(z, p1)
        if keep_cache:
            cache.block_inputs.append(z)
            cache.block_pre.append(z1)
        z = config.lam * conv2d_same(relu(z1), p2) + z
    if keep_cache:
        cache.last_input = z
    out = conv2d_same(z, weights.last) + skip
    return out, cache


def forward(config: NetworkConfig, weights: NetworkWeights, y_a, y_b, y_c=None, return_cache=False):
    """Predict the super-resolved target bands at the resolution of ``y_a``.

    Inputs are expected already divided by the value scale.
    """
    weights.check(config)
    ya, yb, yc, single = _check_inputs(config, y_a, y_b, y_c)
    x0, skip = upsampled_inputs(config, ya, yb, yc)
    out, cache = forward_from_x0(config, weights, x0, skip, keep_cache=return_cache)
    if single:
        out = out[0]
    if return_cache:
        cache.single = single
        cache.shapes = {"a": ya.shape, "b": yb.shape, "c": None if yc is None else yc.shape}
        return out, cache
    return out


@dataclass
class InputGradients:
    y_a: np.ndarray
    y_b: np.ndarray
    y_c: Optional[np.ndarray] = None


def backward(config: NetworkConfig, weights: NetworkWeights, cache: ForwardCache, grad_out: np.ndarray):
    """Reverse-mode gradients of a scalar loss given ``dL/d(output)``.

    Returns ``(weight_gradients, input_gradients)``.
    """
    if cache is None or cache.weights is not weights or cache.config != config:
        raise StaleCache("activation cache was produced by a different forward call")
    g, _ = _batched(grad_out)
    expected = cache.x0.shape[:3] + (config.output_channels,)
    if g.shape != expected:
        raise ShapeMismatch(f"grad_out shape {g.shape}, expected {expected}")

    grads = []
    # the skip term is an additive copy of the upsampled target bands
    grad_skip = g
    gz, gk, gb = conv2d_same_backward(cache.last_input, weights.last, g)
    grads.append((gk, gb))
    for (p1, p2), zin, z1 in zip(reversed(weights.blocks), reversed(cache.block_inputs), reversed(cache.block_pre)):
        g2, gk2, gb2 = conv2d_same_backward(relu(z1), p2, config.lam * gz)
        g1 = g2 * (z1 > 0)
        gzin, gk1, gb1 = conv2d_same_backward(zin, p1, g1)
        grads.append((gk2, gb2))
        grads.append((gk1, gb1))
        gz = gz + gzin
    gpre = gz * (cache.pre_first > 0)
    gx0, gk0, gb0 = conv2d_same_backward(cache.x0, weights.first, gpre)
    grads.append((gk0, gb0))
    tensors = []
    for gk_, gb_ in reversed(grads):
        tensors += [gk_, gb_]
    weight_grads = NetworkWeights.from_tensors(tensors)

    kind = config.upsampling
    ga = gx0[..., :4]
    gub = gx0[..., 4:10]
    if config.scale == 2:
        gub = gub + grad_skip
    gyb = upsample_array_transpose(gub, cache.shapes["b"], 2, kind, axes=(1, 2))
    gyc = None
    if config.scale == 6:
        guc = gx0[..., 10:12] + grad_skip
        gyc = upsample_array_transpose(guc, cache.shapes["c"], 6, kind, axes=(1, 2))
    if cache.single:
        ga, gyb = ga[0], gyb[0]
        gyc = None if gyc is None else gyc[0]
    return weight_grads, InputGradients(ga, gyb, gyc)
