"""Forward-only toy versions of multi-axis attention and MBConv blocks.

Feature maps are ``(H, W, C)`` float64 arrays. Token projections multiply row
vectors on the right (``q = x @ Wq``). Gates use the logistic function; every
other nonlinearity is a rectifier. There are no normalization layers and no
relative position bias.

Seeded weights are drawn uniformly from [-0.5, 0.5] with
``numpy.random.default_rng(seed)``, one matrix after another in declaration
order. The same order is used by the flat binary loader (little-endian float64,
row-major).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "AttentionParams",
    "ConvBlockParams",
    "SEParams",
    "attention_op_count",
    "block_attention",
    "dense_attention",
    "fused_mbconv",
    "grid_attention",
    "max_sa",
    "mbconv",
    "se_block",
    "selfcheck",
]


def _uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-0.5, 0.5, size=shape)


def _read_flat(path, count: int) -> np.ndarray:
    flat = np.fromfile(path, dtype="<f8")
    if flat.size != count:
        raise ValueError(f"{path}: expected {count} float64 values, found {flat.size}")
    return flat


def _split_flat(flat: np.ndarray, shapes) -> list[np.ndarray]:
    out, pos = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(flat[pos:pos + size].reshape(shape).copy())
        pos += size
    return out


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def _as_feature_map(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected an (H, W, C) feature map, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature map contains non-finite values")
    return x


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionParams:
    channels: int
    heads: int
    window_size: int
    grid_size: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        if self.channels < 1 or self.heads < 1 or self.channels % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide channels ({self.channels})")
        if self.window_size < 1 or self.grid_size < 1:
            raise ValueError("window and grid sizes must be positive")
        for name in ("wq", "wk", "wv", "wo"):
            w = np.array(getattr(self, name), dtype=np.float64)
            if w.shape != (self.channels, self.channels):
                raise ValueError(f"{name} must be {self.channels}x{self.channels}")
            object.__setattr__(self, name, w)
        _freeze(self.wq, self.wk, self.wv, self.wo)

    @classmethod
    def from_seed(cls, channels, heads, window_size, grid_size, seed=0) -> AttentionParams:
        rng = np.random.default_rng(seed)
        mats = [_uniform(rng, (channels, channels)) for _ in range(4)]
        return cls(channels, heads, window_size, grid_size, *mats)

    @classmethod
    def from_file(cls, path, channels, heads, window_size, grid_size) -> AttentionParams:
        shapes = [(channels, channels)] * 4
        mats = _split_flat(_read_flat(path, 4 * channels * channels), shapes)
        return cls(channels, heads, window_size, grid_size, *mats)

    def with_sizes(self, window_size=None, grid_size=None) -> AttentionParams:
        return AttentionParams(
            self.channels, self.heads,
            self.window_size if window_size is None else window_size,
            self.grid_size if grid_size is None else grid_size,
            self.wq, self.wk, self.wv, self.wo,
        )


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attend(tokens: np.ndarray, p: AttentionParams):
    """Multi-head self-attention over the second-to-last axis.

    ``tokens`` has shape ``(..., N, C)``; leading axes are independent groups.
    Returns the projected output and the attention probabilities of shape
    ``(..., heads, N, N)``.
    """
    *batch, n, c = tokens.shape
    if c != p.channels:
        raise ValueError(f"tokens have {c} channels, params expect {p.channels}")
    d = c // p.heads

    def heads(w):
        # (..., N, C) -> (..., h, N, d)
        return np.swapaxes((tokens @ w).reshape(*batch, n, p.heads, d), -2, -3)

    q, k, v = heads(p.wq), heads(p.wk), heads(p.wv)
    probs = softmax(q @ np.swapaxes(k, -1, -2) / math.sqrt(d))
    mixed = np.swapaxes(probs @ v, -2, -3).reshape(*batch, n, c)
    return mixed @ p.wo, probs


def dense_attention(x, p: AttentionParams, return_probs: bool = False):
    """Full self-attention among all ``H * W`` tokens (row-major order)."""
    x = _as_feature_map(x)
    h, w, c = x.shape
    out, probs = attend(x.reshape(h * w, c), p)
    out = out.reshape(h, w, c)
    return (out, probs) if return_probs else out


def _check_divides(size: int, h: int, w: int, what: str):
    if h % size or w % size:
        raise ValueError(f"{what} {size} must divide the feature map size {h}x{w}")


def _windows(x: np.ndarray, size: int) -> np.ndarray:
    h, w, c = x.shape
    t = x.reshape(h // size, size, w // size, size, c).transpose(0, 2, 1, 3, 4)
    return t.reshape(-1, size * size, c)


def _unwindows(t: np.ndarray, size: int, shape) -> np.ndarray:
    h, w, c = shape
    t = t.reshape(h // size, w // size, size, size, c).transpose(0, 2, 1, 3, 4)
    return t.reshape(h, w, c)


def _grid_groups(x: np.ndarray, grid: int) -> np.ndarray:
    # pixel (i * sh + a, j * sw + b) joins group (a, b) at slot (i, j)
    h, w, c = x.shape
    sh, sw = h // grid, w // grid
    t = x.reshape(grid, sh, grid, sw, c).transpose(1, 3, 0, 2, 4)
    return t.reshape(sh * sw, grid * grid, c)


def _ungrid_groups(t: np.ndarray, grid: int, shape) -> np.ndarray:
    h, w, c = shape
    sh, sw = h // grid, w // grid
    t = t.reshape(sh, sw, grid, grid, c).transpose(2, 0, 3, 1, 4)
    return t.reshape(h, w, c)


def block_attention(x, p: AttentionParams, return_probs: bool = False):
    """Self-attention inside each non-overlapping ``P x P`` window."""
    x = _as_feature_map(x)
    _check_divides(p.window_size, x.shape[0], x.shape[1], "window size")
    out, probs = attend(_windows(x, p.window_size), p)
    out = _unwindows(out, p.window_size, x.shape)
    return (out, probs) if return_probs else out


def grid_attention(x, p: AttentionParams, return_probs: bool = False):
    """Self-attention among tokens on a ``G x G`` strided grid.

    Tokens whose row indices agree modulo ``H / G`` and whose column indices
    agree modulo ``W / G`` attend to each other, giving each group a sparse
    view spanning the whole map.
    """
    x = _as_feature_map(x)
    _check_divides(p.grid_size, x.shape[0], x.shape[1], "grid size")
    out, probs = attend(_grid_groups(x, p.grid_size), p)
    out = _ungrid_groups(out, p.grid_size, x.shape)
    return (out, probs) if return_probs else out


def max_sa(x, p: AttentionParams) -> np.ndarray:
    """Window attention followed by grid attention."""
    return grid_attention(block_attention(x, p), p)


def attention_op_count(H, W, C, h, variant, P=None, G=None) -> int:
    """Multiply-accumulates in the score and value stages of attention.

    Projections are excluded. Dense attention costs ``2 (HW)^2 C``; window plus
    grid attention costs ``2 HW P^2 C + 2 HW G^2 C``. The head count does not
    change either figure since heads split the channels.
    """
    if C % h:
        raise ValueError(f"heads ({h}) must divide channels ({C})")
    tokens = H * W
    if variant == "dense":
        return 2 * tokens * tokens * C
    if variant == "max_sa":
        if P is None or G is None:
            raise ValueError("max_sa needs both window size P and grid size G")
        _check_divides(P, H, W, "window size")
        _check_divides(G, H, W, "grid size")
        return 2 * tokens * P * P * C + 2 * tokens * G * G * C
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# Squeeze-excitation and MBConv
# ---------------------------------------------------------------------------


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def relu(z):
    return np.maximum(z, 0.0)


@dataclass(frozen=True)
class SEParams:
    """Bottleneck ``C -> C / r -> C`` producing per-channel gates."""

    channels: int
    reduction: int
    reduce_w: np.ndarray
    reduce_b: np.ndarray
    expand_w: np.ndarray
    expand_b: np.ndarray

    def __post_init__(self):
        if self.reduction < 1 or self.channels % self.reduction:
            raise ValueError(
                f"reduction ratio {self.reduction} must divide channels {self.channels}"
            )
        for f, shape in zip(("reduce_w", "reduce_b", "expand_w", "expand_b"), self.shapes()):
            arr = np.array(getattr(self, f), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{f} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, f, arr)
        _freeze(self.reduce_w, self.reduce_b, self.expand_w, self.expand_b)

    @staticmethod
    def shapes_for(channels: int, reduction: int):
        hidden = channels // reduction
        return [(channels, hidden), (hidden,), (hidden, channels), (channels,)]

    def shapes(self):
        return self.shapes_for(self.channels, self.reduction)

    @classmethod
    def from_seed(cls, channels, reduction, seed=0) -> SEParams:
        rng = np.random.default_rng(seed)
        return cls(channels, reduction, *[_uniform(rng, s) for s in cls.shapes_for(channels, reduction)])


def se_block(x, p) -> np.ndarray:
    """Rescale each channel of ``x`` by a gate computed from its global mean.

    ``p`` may be :class:`SEParams` or a :class:`ConvBlockParams` carrying one.
    """
    p = getattr(p, "se", p)
    x = _as_feature_map(x)
    if x.shape[2] != p.channels:
        raise ValueError(f"input has {x.shape[2]} channels, SE expects {p.channels}")
    pooled = x.mean(axis=(0, 1))
    hidden = relu(pooled @ p.reduce_w + p.reduce_b)
    gate = sigmoid(hidden @ p.expand_w + p.expand_b)
    return x * gate


def conv2d_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded stride-1 convolution; ``kernel`` is ``(k, k, C_in, C_out)``."""
    k = kernel.shape[0]
    r = k // 2
    h, w, _ = x.shape
    padded = np.pad(x, ((r, r), (r, r), (0, 0)))
    out = np.zeros((h, w, kernel.shape[3]))
    for dy in range(k):
        for dx in range(k):
            out += padded[dy:dy + h, dx:dx + w, :] @ kernel[dy, dx]
    return out


def depthwise_conv2d_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded per-channel convolution; ``kernel`` is ``(k, k, C)``."""
    k = kernel.shape[0]
    r = k // 2
    h, w, _ = x.shape
    padded = np.pad(x, ((r, r), (r, r), (0, 0)))
    out = np.zeros_like(x)
    for dy in range(k):
        for dx in range(k):
            out += padded[dy:dy + h, dx:dx + w, :] * kernel[dy, dx]
    return out


@dataclass(frozen=True)
class ConvBlockParams:
    """Weights for an MBConv (``fused=False``) or Fused-MBConv block.

    Declaration order: ``expand``, ``depthwise`` (MBConv only), the SE
    parameters, ``project``. ``expand`` is ``(C_in, C_exp)`` for MBConv and a
    ``(k, k, C_in, C_exp)`` kernel when fused.
    """

    in_channels: int
    out_channels: int
    expansion: int
    reduction: int
    fused: bool
    expand: np.ndarray
    depthwise: np.ndarray | None
    se: SEParams
    project: np.ndarray
    kernel_size: int = 3

    def __post_init__(self):
        if self.expansion < 1 or self.reduction < 1:
            raise ValueError("expansion and reduction ratios must be >= 1")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        shapes = self.shapes_for(
            self.in_channels, self.out_channels, self.expansion, self.reduction,
            self.fused, self.kernel_size,
        )
        for name in ("expand", "depthwise", "project"):
            value = getattr(self, name)
            if shapes[name] is None:
                if value is not None:
                    raise ValueError("fused blocks have no depthwise kernel")
                continue
            arr = np.array(value, dtype=np.float64)
            if arr.shape != shapes[name]:
                raise ValueError(f"{name} must have shape {shapes[name]}, got {arr.shape}")
            _freeze(arr)
            object.__setattr__(self, name, arr)
        if self.se.channels != self.hidden_channels:
            raise ValueError("SE channels must equal the expanded channel count")

    @property
    def hidden_channels(self) -> int:
        return self.in_channels * self.expansion

    @staticmethod
    def shapes_for(c_in, c_out, expansion, reduction, fused, k=3) -> dict:
        hidden = c_in * expansion
        return {
            "expand": (k, k, c_in, hidden) if fused else (c_in, hidden),
            "depthwise": None if fused else (k, k, hidden),
            "project": (hidden, c_out),
        }

    @classmethod
    def _build(cls, c_in, c_out, expansion, reduction, fused, k, draw):
        shapes = cls.shapes_for(c_in, c_out, expansion, reduction, fused, k)
        hidden = c_in * expansion
        expand = draw(shapes["expand"])
        depthwise = None if fused else draw(shapes["depthwise"])
        if hidden % reduction:
            raise ValueError(f"reduction ratio {reduction} must divide {hidden} channels")
        se = SEParams(hidden, reduction, *[draw(s) for s in SEParams.shapes_for(hidden, reduction)])
        project = draw(shapes["project"])
        return cls(c_in, c_out, expansion, reduction, fused, expand, depthwise, se, project, k)

    @classmethod
    def from_seed(cls, c_in, c_out, expansion=4, reduction=4, fused=False, seed=0, kernel_size=3):
        rng = np.random.default_rng(seed)
        return cls._build(c_in, c_out, expansion, reduction, fused, kernel_size,
                          lambda s: _uniform(rng, s))

    @classmethod
    def from_file(cls, path, c_in, c_out, expansion=4, reduction=4, fused=False, kernel_size=3):
        flat = np.fromfile(path, dtype="<f8")
        pos = 0

        def draw(shape):
            nonlocal pos
            size = int(np.prod(shape))
            if pos + size > flat.size:
                raise ValueError(f"{path}: too few values for the block weights")
            out = flat[pos:pos + size].reshape(shape)
            pos += size
            return out

        params = cls._build(c_in, c_out, expansion, reduction, fused, kernel_size, draw)
        if pos != flat.size:
            raise ValueError(f"{path}: {flat.size - pos} unused values after the block weights")
        return params

    def replace(self, **changes) -> ConvBlockParams:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ConvBlockParams(**values)


def _check_residual(x: np.ndarray, p: ConvBlockParams):
    if x.shape[2] != p.in_channels:
        raise ValueError(f"input has {x.shape[2]} channels, block expects {p.in_channels}")
    if p.out_channels != p.in_channels:
        raise ValueError("residual connection needs out_channels == in_channels")
    if min(x.shape[:2]) < p.kernel_size:
        raise ValueError("spatial size must be at least the kernel size")


def mbconv(x, p: ConvBlockParams) -> np.ndarray:
    """1x1 expand, depthwise k x k, SE, 1x1 project, plus the input."""
    x = _as_feature_map(x)
    if p.fused:
        raise ValueError("params describe a fused block; use fused_mbconv")
    _check_residual(x, p)
    hidden = relu(x @ p.expand)
    hidden = relu(depthwise_conv2d_same(hidden, p.depthwise))
    hidden = se_block(hidden, p.se)
    return x + hidden @ p.project


def fused_mbconv(x, p: ConvBlockParams) -> np.ndarray:
    """Full k x k expanding convolution, SE, 1x1 project, plus the input."""
    x = _as_feature_map(x)
    if not p.fused:
        raise ValueError("params describe an unfused block; use mbconv")
    _check_residual(x, p)
    hidden = relu(conv2d_same(x, p.expand))
    hidden = se_block(hidden, p.se)
    return x + hidden @ p.project


# ---------------------------------------------------------------------------
# Self-check
# ---------------------------------------------------------------------------


def _rel_err(a, b) -> float:
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def selfcheck(seed: int = 0, size: int = 4, channels: int = 8, heads: int = 2,
              weights_path=None) -> list[tuple[str, bool, str]]:
    """Run the structural checks; returns ``(name, passed, detail)`` rows.

    ``size`` must be even so that 2x2 windows and a 2x2 grid tile the map.
    """
    if size < 2 or size % 2:
        raise ValueError("size must be an even integer >= 2")
    rng = np.random.default_rng(seed)
    if weights_path is not None:
        base = AttentionParams.from_file(weights_path, channels, heads, 2, 2)
    else:
        base = AttentionParams.from_seed(channels, heads, 2, 2, seed)
    x = rng.normal(size=(size, size, channels))
    results = []

    def record(name, ok, detail=""):
        results.append((name, bool(ok), detail))

    dense, dense_probs = dense_attention(x, base, return_probs=True)
    full = base.with_sizes(size, size)
    err = _rel_err(block_attention(x, full), dense)
    record("block_full_window_equals_dense", err <= 1e-9, f"rel_err={err:.3e}")
    err = _rel_err(grid_attention(x, full), dense)
    record("grid_full_grid_equals_dense", err <= 1e-9, f"rel_err={err:.3e}")

    _, bp = block_attention(x, base, return_probs=True)
    _, gp = grid_attention(x, base, return_probs=True)
    worst = max(float(np.max(np.abs(pr.sum(axis=-1) - 1))) for pr in (dense_probs, bp, gp))
    record("softmax_rows_sum_to_one", worst <= 1e-12, f"max_dev={worst:.3e}")

    single = base.with_sizes(1, 1)
    token_proj = x @ base.wv @ base.wo
    err = max(_rel_err(block_attention(x, single), token_proj),
              _rel_err(grid_attention(x, single), token_proj))
    record("singleton_groups_are_projections", err <= 1e-9, f"rel_err={err:.3e}")

    # half-size windows then a 2x2 grid: every grid group meets every window
    half = base.with_sizes(size // 2, 2)
    bumped = x.copy()
    bumped[0, 0] += 1.0
    changed_max = np.any(np.abs(max_sa(bumped, half) - max_sa(x, half)) > 1e-12, axis=-1)
    changed_block = np.any(
        np.abs(block_attention(bumped, half) - block_attention(x, half)) > 1e-12, axis=-1
    )
    window = np.zeros((size, size), dtype=bool)
    window[:size // 2, :size // 2] = True
    ok = changed_max.all() and not changed_block[~window].any()
    record("max_sa_mixes_globally", ok,
           f"max_sa={int(changed_max.sum())}/{size * size} block_outside={int(changed_block[~window].sum())}")

    d1 = attention_op_count(size, size, channels, heads, "dense")
    d2 = attention_op_count(size, 2 * size, channels, heads, "dense")
    m1 = attention_op_count(size, size, channels, heads, "max_sa", 2, 2)
    m2 = attention_op_count(size, 2 * size, channels, heads, "max_sa", 2, 2)
    record("dense_cost_quadratic", d2 == 4 * d1, f"ratio={d2 / d1}")
    record("max_sa_cost_linear", m2 == 2 * m1, f"ratio={m2 / m1}")

    cp = ConvBlockParams.from_seed(channels, channels, expansion=2, reduction=2, seed=seed)
    xs = rng.normal(size=(max(size, 3), max(size, 3), channels))
    zero_se = SEParams(cp.se.channels, cp.se.reduction, cp.se.reduce_w, cp.se.reduce_b,
                       np.zeros_like(cp.se.expand_w), np.zeros_like(cp.se.expand_b))
    zeroed = cp.replace(expand=np.zeros_like(cp.expand), depthwise=np.zeros_like(cp.depthwise),
                        project=np.zeros_like(cp.project), se=zero_se)
    err = float(np.max(np.abs(mbconv(xs, zeroed) - xs)))
    fp = ConvBlockParams.from_seed(channels, channels, expansion=2, reduction=2, fused=True, seed=seed)
    fzero = fp.replace(expand=np.zeros_like(fp.expand), project=np.zeros_like(fp.project), se=zero_se)
    err = max(err, float(np.max(np.abs(fused_mbconv(xs, fzero) - xs))))
    record("mbconv_zero_weights_residual_identity", err <= 1e-12, f"max_abs={err:.3e}")

    hidden = rng.normal(size=(3, 3, cp.hidden_channels))
    err = float(np.max(np.abs(se_block(hidden, zero_se) - 0.5 * hidden)))
    record("se_zero_gate_halves_input", err == 0.0, f"max_abs={err:.3e}")
    return results
