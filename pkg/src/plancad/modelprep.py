"""Desk-scale model mathematics: primitive tokens, bilinear feature sampling,
the gated fusion layer, the three-term mask loss, and gradient checking.

Forward and analytic backward passes only; no training loops or backbones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .chunker import Chunk
from .geometry import Kind

TOKEN_TYPES = (Kind.LINE, Kind.ARC, Kind.CIRCLE, Kind.POLYSEG)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class PointToken:
    center: geometry.Point
    type_one_hot: tuple[float, float, float, float]
    length: float
    orientation: float  # radians in [0, pi); 0 for circles


@dataclass(frozen=True)
class FeatureGrid:
    values: np.ndarray  # (H, W, C)
    size_m: float = 14.0

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ShapeError("feature grid must be (H, W, C) with positive dims")


@dataclass(frozen=True)
class FusionParams:
    w1: np.ndarray  # (1, h) scalar gate, or (d_v, h) per-channel gate
    w2: np.ndarray  # (h, d_x)
    w3: np.ndarray  # (h, d_v)


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float
    lambda_bce: float
    lambda_dice: float

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_bce, self.lambda_dice) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_cls == self.lambda_bce == self.lambda_dice == 0:
            raise ValueError("at least one loss weight must be positive")


def _chord_orientation(p0: geometry.Point, p1: geometry.Point) -> float:
    a = math.atan2(p1[1] - p0[1], p1[0] - p0[0]) % math.pi
    return 0.0 if a >= math.pi else a


def tokenize_primitives(chunk: Chunk) -> list[PointToken]:
    """One token per primitive: center, kind one-hot, length, orientation."""
    tokens = []
    for cp in chunk.primitives:
        p = cp.primitive
        one_hot = tuple(1.0 if p.kind is k else 0.0 for k in TOKEN_TYPES)
        if p.kind in (Kind.LINE, Kind.POLYSEG):
            center = ((p.p0[0] + p.p1[0]) / 2.0, (p.p0[1] + p.p1[1]) / 2.0)
            orientation = _chord_orientation(p.p0, p.p1)
        elif p.kind is Kind.CIRCLE:
            center = p.center
            orientation = 0.0
        else:
            center = geometry.arc_point(p.center, p.radius,
                                        p.start_angle + p.sweep / 2.0)
            e0 = geometry.arc_point(p.center, p.radius, p.start_angle)
            e1 = geometry.arc_point(p.center, p.radius, p.end_angle)
            orientation = _chord_orientation(e0, e1)
        tokens.append(PointToken(center, one_hot, geometry.primitive_length(p),
                                 orientation))
    return tokens


CENTER_SNAP_EPS = 1e-9  # pixel units


def _grid_coord(value: float, size_m: float, n: int) -> float:
    g = min(max(value / size_m * n - 0.5, 0.0), n - 1.0)
    # Queries within a billionth of a pixel of a center are treated as the
    # center, so center lookups reproduce grid values bit for bit.
    nearest = round(g)
    if abs(g - nearest) <= CENTER_SNAP_EPS:
        return float(nearest)
    return g


def sample_features(grid: FeatureGrid, points: list[geometry.Point]) -> np.ndarray:
    """Bilinear interpolation at chunk coordinates; outside queries clamp to
    the border pixel centers. Returns an (N, C) array."""
    f = grid.values
    h, w, _ = f.shape
    out = np.empty((len(points), f.shape[2]), dtype=f.dtype)
    for i, (x, y) in enumerate(points):
        # Pixel-center coordinates; pixel (r, c) is centered at
        # ((c + 0.5) * size/w, (r + 0.5) * size/h).
        gx = _grid_coord(x, grid.size_m, w)
        gy = _grid_coord(y, grid.size_m, h)
        c0 = int(math.floor(gx))
        r0 = int(math.floor(gy))
        c1 = min(c0 + 1, w - 1)
        r1 = min(r0 + 1, h - 1)
        fx = gx - c0
        fy = gy - r0
        out[i] = ((1.0 - fy) * ((1.0 - fx) * f[r0, c0] + fx * f[r0, c1])
                  + fy * ((1.0 - fx) * f[r1, c0] + fx * f[r1, c1]))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_fusion_shapes(params: FusionParams, x: np.ndarray, v: np.ndarray,
                         mode: str) -> None:
    if x.ndim != 1 or v.ndim != 1:
        raise ShapeError("primitive and image features must be vectors")
    h = params.w2.shape[0]
    if params.w2.ndim != 2 or params.w3.ndim != 2 or params.w1.ndim != 2:
        raise ShapeError("fusion parameters must be matrices")
    if params.w3.shape[0] != h:
        raise ShapeError("w2 and w3 disagree on the hidden width")
    if params.w2.shape[1] != x.shape[0]:
        raise ShapeError(f"w2 expects d_x={params.w2.shape[1]}, got {x.shape[0]}")
    if params.w3.shape[1] != v.shape[0]:
        raise ShapeError(f"w3 expects d_v={params.w3.shape[1]}, got {v.shape[0]}")
    if params.w1.shape[1] != h:
        raise ShapeError("w1 hidden width mismatch")
    if mode == "scalar":
        if params.w1.shape[0] != 1:
            raise ShapeError("scalar mode needs w1 of shape (1, h)")
    elif mode == "per_channel":
        if params.w1.shape[0] != v.shape[0]:
            raise ShapeError("per-channel mode needs w1 of shape (d_v, h)")
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")


def adaptive_fuse(params: FusionParams, x: np.ndarray, v: np.ndarray,
                  mode: str = "scalar") -> np.ndarray:
    """Gated concatenation: u = [x, w * v] with
    w = sigmoid(w1 @ tanh(w2 @ x + w3 @ v)).

    The default gate is a scalar per primitive; per_channel mode gates each
    image-feature channel separately.
    """
    u, _ = _fuse_forward(params, x, v, mode)
    return u


def _fuse_forward(params: FusionParams, x: np.ndarray, v: np.ndarray, mode: str):
    _check_fusion_shapes(params, x, v, mode)
    hidden = params.w2 @ x + params.w3 @ v
    t = np.tanh(hidden)
    z = params.w1 @ t
    w = _sigmoid(z)
    gate = w[0] if mode == "scalar" else w
    u = np.concatenate([x, gate * v])
    return u, (t, w, gate)


def fuse_gate(params: FusionParams, x: np.ndarray, v: np.ndarray,
              mode: str = "scalar") -> np.ndarray:
    """The gate value(s) w alone."""
    _, (_, w, _) = _fuse_forward(params, x, v, mode)
    return w


def fuse_objective_and_grads(params: FusionParams, x: np.ndarray, v: np.ndarray,
                             mode: str = "scalar"):
    """Scalar objective J = 0.5 * ||u||^2 with analytic gradients w.r.t.
    w1, w2, w3, x and v. Used by gradient checking."""
    u, (t, w, gate) = _fuse_forward(params, x, v, mode)
    d_x = x.shape[0]
    value = 0.5 * float(u @ u)
    du = u
    dx = du[:d_x].copy()
    dgated = du[d_x:]
    dv = np.asarray(gate * dgated, dtype=np.float64).copy()
    if mode == "scalar":
        dw = np.array([float(dgated @ v)])
    else:
        dw = dgated * v
    dz = dw * w * (1.0 - w)
    dw1 = np.outer(dz, t)
    dt = params.w1.T @ dz
    dh = dt * (1.0 - t * t)
    dw2 = np.outer(dh, x)
    dw3 = np.outer(dh, v)
    dx += params.w2.T @ dh
    dv += params.w3.T @ dh
    return value, {"w1": dw1, "w2": dw2, "w3": dw3, "x": dx, "v": dv}


# -- losses -------------------------------------------------------------------

DICE_EPS = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cls: float
    bce: float
    dice: float


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_loss_shapes(pred_logits, mask_logits, target_classes, target_masks):
    if pred_logits.ndim != 2:
        raise ShapeError("class logits must be (N, K)")
    if target_classes.shape != pred_logits.shape:
        raise ShapeError("one-hot class targets must match the class logits shape")
    if mask_logits.ndim != 2:
        raise ShapeError("mask logits must be (Q, N)")
    if target_masks.shape != mask_logits.shape:
        raise ShapeError("mask targets must match the mask logits shape")
    if mask_logits.shape[1] != pred_logits.shape[0]:
        raise ShapeError("mask and class tensors disagree on the primitive count")


def loss_total(weights: LossWeights, pred_logits: np.ndarray,
               pred_mask_logits: np.ndarray, target_classes: np.ndarray,
               target_masks: np.ndarray) -> LossBreakdown:
    """Weighted sum of softmax cross-entropy, mask binary cross-entropy and
    soft dice (smoothing constant 1), averaged over primitives / entries /
    queries respectively."""
    pred_logits = np.asarray(pred_logits, dtype=np.float64)
    pred_mask_logits = np.asarray(pred_mask_logits, dtype=np.float64)
    target_classes = np.asarray(target_classes, dtype=np.float64)
    target_masks = np.asarray(target_masks, dtype=np.float64)
    _check_loss_shapes(pred_logits, pred_mask_logits, target_classes, target_masks)
    n = pred_logits.shape[0]

    l_cls = float(-(target_classes * _log_softmax(pred_logits)).sum() / n)

    m = pred_mask_logits
    g = target_masks
    bce = np.maximum(m, 0.0) - m * g + np.log1p(np.exp(-np.abs(m)))
    l_bce = float(bce.mean())

    p = _sigmoid(m)
    num = 2.0 * (p * g).sum(axis=1) + DICE_EPS
    den = p.sum(axis=1) + g.sum(axis=1) + DICE_EPS
    l_dice = float((1.0 - num / den).mean())

    total = (weights.lambda_cls * l_cls + weights.lambda_bce * l_bce
             + weights.lambda_dice * l_dice)
    return LossBreakdown(total, l_cls, l_bce, l_dice)


def loss_objective_and_grads(weights: LossWeights, pred_logits: np.ndarray,
                             pred_mask_logits: np.ndarray, target_classes: np.ndarray,
                             target_masks: np.ndarray):
    """Total loss with analytic gradients w.r.t. both logit tensors."""
    pred_logits = np.asarray(pred_logits, dtype=np.float64)
    pred_mask_logits = np.asarray(pred_mask_logits, dtype=np.float64)
    target_classes = np.asarray(target_classes, dtype=np.float64)
    target_masks = np.asarray(target_masks, dtype=np.float64)
    breakdown = loss_total(weights, pred_logits, pred_mask_logits,
                           target_classes, target_masks)
    n = pred_logits.shape[0]
    q = pred_mask_logits.shape[0]
    entries = pred_mask_logits.size

    softmax = np.exp(_log_softmax(pred_logits))
    d_cls = (softmax - target_classes) / n

    m = pred_mask_logits
    g = target_masks
    p = _sigmoid(m)
    d_bce = (p - g) / entries

    num = 2.0 * (p * g).sum(axis=1, keepdims=True) + DICE_EPS
    den = (p.sum(axis=1, keepdims=True) + g.sum(axis=1, keepdims=True) + DICE_EPS)
    d_dice_dp = -(2.0 * g * den - num) / (den * den) / q
    d_dice = d_dice_dp * p * (1.0 - p)

    grads = {
        "pred_logits": weights.lambda_cls * d_cls,
        "pred_mask_logits": weights.lambda_bce * d_bce + weights.lambda_dice * d_dice,
    }
    return breakdown.total, grads


def grad_check(value_and_grad, params: dict[str, np.ndarray],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    `value_and_grad(params) -> (value, {name: grad})`; every named array is
    perturbed coordinate by coordinate.
    """
    _, analytic = value_and_grad(params)
    worst = 0.0
    for name, base in params.items():
        if name not in analytic:
            continue
        ga = np.asarray(analytic[name], dtype=np.float64)
        flat = np.asarray(base, dtype=np.float64).ravel()
        for idx in range(flat.size):
            bumped = {k: np.array(v, dtype=np.float64, copy=True)
                      for k, v in params.items()}
            bumped[name].ravel()[idx] += eps
            hi, _ = value_and_grad(bumped)
            bumped[name].ravel()[idx] -= 2 * eps
            lo, _ = value_and_grad(bumped)
            gn = (hi - lo) / (2.0 * eps)
            gav = ga.ravel()[idx]
            err = abs(gav - gn) / max(1e-8, abs(gav) + abs(gn))
            worst = max(worst, err)
    return worst


def fuse_grad_check(seed: int, d_x: int = 3, d_v: int = 2, h: int = 4,
                    mode: str = "scalar", eps: float = 1e-5) -> float:
    """Gradient-check adaptive fusion at a random small configuration."""
    rng = np.random.default_rng(seed)
    rows = 1 if mode == "scalar" else d_v
    params = {
        "w1": rng.normal(scale=0.5, size=(rows, h)),
        "w2": rng.normal(scale=0.5, size=(h, d_x)),
        "w3": rng.normal(scale=0.5, size=(h, d_v)),
        "x": rng.normal(scale=0.5, size=d_x),
        "v": rng.normal(scale=0.5, size=d_v),
    }

    def fn(p):
        fp = FusionParams(p["w1"], p["w2"], p["w3"])
        return fuse_objective_and_grads(fp, p["x"], p["v"], mode)

    return grad_check(fn, params, eps)


def loss_grad_check(seed: int, n: int = 5, k: int = 3, q: int = 2,
                    weights: LossWeights | None = None, eps: float = 1e-5) -> float:
    """Gradient-check the loss at random logits and random binary targets."""
    rng = np.random.default_rng(seed)
    if weights is None:
        weights = LossWeights(1.0, 1.0, 1.0)
    target_classes = np.eye(k)[rng.integers(0, k, size=n)]
    target_masks = rng.integers(0, 2, size=(q, n)).astype(np.float64)
    params = {
        "pred_logits": rng.normal(scale=1.0, size=(n, k)),
        "pred_mask_logits": rng.normal(scale=1.0, size=(q, n)),
    }

    def fn(p):
        return loss_objective_and_grads(weights, p["pred_logits"],
                                        p["pred_mask_logits"], target_classes,
                                        target_masks)

    return grad_check(fn, params, eps)


# -- token/feature dumps ------------------------------------------------------

def tokens_to_array(tokens: list[PointToken]) -> np.ndarray:
    """Dense (N, 8) layout: x, y, one-hot(4), length, orientation."""
    out = np.zeros((len(tokens), 8), dtype=np.float64)
    for i, t in enumerate(tokens):
        out[i, 0:2] = t.center
        out[i, 2:6] = t.type_one_hot
        out[i, 6] = t.length
        out[i, 7] = t.orientation
    return out


def dump_array(arr: np.ndarray) -> bytes:
    """`plancad-array/1 <dims...>` header line, then little-endian float64."""
    header = "plancad-array/1 " + " ".join(str(d) for d in arr.shape) + "\n"
    return header.encode("ascii") + np.asarray(arr, dtype="<f8").tobytes()


def load_array(data: bytes) -> np.ndarray:
    nl = data.index(b"\n")
    parts = data[:nl].decode("ascii").split()
    if not parts or parts[0] != "plancad-array/1":
        raise ValueError("not a plancad array dump")
    shape = tuple(int(p) for p in parts[1:])
    return np.frombuffer(data[nl + 1:], dtype="<f8").reshape(shape).copy()
