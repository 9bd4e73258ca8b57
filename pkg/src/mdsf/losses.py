"""Box regression, classification and cross-scale coherence losses.

Boxes are ``(cx, cy, w, h)`` in normalized image coordinates and are passed
as arrays or tensors with a trailing axis of 4. A box doubles as the 2-D
Gaussian ``N((cx, cy), diag(w^2/4, h^2/4))``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, DomainError
from .functional import log_sigmoid
from .tensor import Tensor, as_tensor, maximum, minimum, stack, take, where

CSC_PAIRS = ((3, 4), (4, 5), (3, 5))
COSINE_EPS = 1e-8


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DomainError(f"degenerate box: w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])

    def gaussian(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([self.cx, self.cy]), np.diag([self.w**2 / 4, self.h**2 / 4])


@dataclass(frozen=True)
class LossConfig:
    tau_w: float = 1.0
    tau_s: float = 0.01
    lambda_c: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float | None = 0.25
    force_omega: float | None = None

    def __post_init__(self):
        if self.tau_w <= 0 or self.tau_s <= 0:
            raise ConfigError("tau_w and tau_s must be positive")
        if self.lambda_c < 0:
            raise ConfigError("lambda_c must be non-negative")


def _boxes(b) -> Tensor:
    if isinstance(b, BBox):
        return Tensor(b.as_array())
    return as_tensor(b)


def _parts(b: Tensor):
    return b[..., 0], b[..., 1], b[..., 2], b[..., 3]


def wasserstein_sq(p, g) -> Tensor:
    """Squared 2-Wasserstein distance between the Gaussian forms of two boxes."""
    px, py, pw, ph = _parts(_boxes(p))
    gx, gy, gw, gh = _parts(_boxes(g))
    return (px - gx) ** 2 + (py - gy) ** 2 + ((pw - gw) ** 2 + (ph - gh) ** 2) * 0.25


def nwd_loss(p, g, tau_w: float = 1.0) -> Tensor:
    """``1 - exp(-W2 / tau_w)``; 0 exactly when the boxes coincide."""
    return 1.0 - (-(wasserstein_sq(p, g).sqrt()) * (1.0 / tau_w)).exp()


def _corners(b: Tensor):
    cx, cy, w, h = _parts(b)
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def iou(p, g) -> Tensor:
    p, g = _boxes(p), _boxes(g)
    px1, py1, px2, py2 = _corners(p)
    gx1, gy1, gx2, gy2 = _corners(g)
    iw = maximum(minimum(px2, gx2) - maximum(px1, gx1), 0.0)
    ih = maximum(minimum(py2, gy2) - maximum(py1, gy1), 0.0)
    inter = iw * ih
    union = p[..., 2] * p[..., 3] + g[..., 2] * g[..., 3] - inter
    return inter / union


def iou_loss(p, g) -> Tensor:
    return 1.0 - iou(p, g)


def ciou_loss(p, g, detach_alpha: bool = False) -> Tensor:
    """Complete-IoU loss ``1 - IoU + rho^2/c^2 + alpha*v``.

    ``alpha = v / ((1 - IoU) + v)`` is differentiated through by default so
    the gradient is exact; ``detach_alpha=True`` holds it constant instead.
    """
    p, g = _boxes(p), _boxes(g)
    overlap = iou(p, g)
    px1, py1, px2, py2 = _corners(p)
    gx1, gy1, gx2, gy2 = _corners(g)
    cw = maximum(px2, gx2) - minimum(px1, gx1)
    ch = maximum(py2, gy2) - minimum(py1, gy1)
    diag_sq = cw**2 + ch**2
    rho_sq = (p[..., 0] - g[..., 0]) ** 2 + (p[..., 1] - g[..., 1]) ** 2
    v = ((g[..., 2] / g[..., 3]).arctan() - (p[..., 2] / p[..., 3]).arctan()) ** 2 * (4.0 / math.pi**2)
    denom = (1.0 - overlap) + v
    safe = denom.data > 0
    if detach_alpha:
        alpha = Tensor(np.where(safe, v.data / np.where(safe, denom.data, 1.0), 0.0))
    else:
        # identical boxes give 0/0; alpha*v -> 0 there
        alpha = where(safe, v / where(safe, denom, 1.0), 0.0)
    return 1.0 - overlap + rho_sq / diag_sq + v * alpha


def area_weight(area, tau_s: float) -> Tensor:
    """``omega = exp(-area / tau_s)``: 1 for vanishing targets, decaying with area."""
    return (-as_tensor(area) * (1.0 / tau_s)).exp()


def sa_wiou(p, g, cfg: LossConfig = LossConfig()) -> Tensor:
    """Area-adaptive blend ``omega * NWD + (1 - omega) * CIoU`` keyed on the ground-truth area."""
    g_t = _boxes(g)
    if cfg.force_omega is not None:
        omega = Tensor(np.full(g_t.shape[:-1], float(cfg.force_omega)))
    else:
        omega = area_weight(g_t[..., 2] * g_t[..., 3], cfg.tau_s)
    return omega * nwd_loss(p, g_t, cfg.tau_w) + (1.0 - omega) * ciou_loss(p, g_t)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity with the norm product floored at ``COSINE_EPS``."""
    dot = (a * b).sum(axis=-1)
    norms = ((a * a).sum(axis=-1) * (b * b).sum(axis=-1)).sqrt()
    return dot / maximum(norms, COSINE_EPS)


def csc_loss(e3, e4, e5) -> Tensor:
    """``1 - mean over boxes and level pairs of the cosine between centre embeddings``.

    Each argument is ``[G, C]`` (one row per ground-truth box). With no boxes
    the loss is 0.
    """
    emb = {3: as_tensor(e3), 4: as_tensor(e4), 5: as_tensor(e5)}
    G = emb[3].shape[0]
    if G == 0:
        return Tensor(0.0)
    sims = stack([cosine(emb[i], emb[j]) for i, j in CSC_PAIRS], axis=0)
    return 1.0 - sims.mean()


def center_embeddings(levels, boxes) -> tuple:
    """Nearest-cell feature vectors at each box centre for every level; returns three ``[G, C]`` tensors."""
    boxes = np.asarray(boxes.data if isinstance(boxes, Tensor) else boxes, dtype=np.float64).reshape(-1, 4)
    out = []
    for fmap in levels:
        fmap = as_tensor(fmap)
        C, H, W = fmap.shape
        iy = np.clip(np.floor(boxes[:, 1] * H).astype(int), 0, H - 1)
        ix = np.clip(np.floor(boxes[:, 0] * W).astype(int), 0, W - 1)
        flat = fmap.reshape(C, H * W).transpose()
        out.append(take(flat, iy * W + ix))
    return tuple(out)


def focal_loss(logits, targets, gamma: float = 2.0, alpha: float | None = 0.25, normalizer: float | None = None) -> Tensor:
    """Binary focal loss summed over cells and classes, divided by ``normalizer``.

    ``alpha`` weights positives by ``alpha`` and negatives by ``1 - alpha``;
    ``None`` disables the weighting. ``normalizer`` defaults to
    ``max(1, number of positives)``.
    """
    z = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    signed = z * Tensor(2.0 * t - 1.0)
    log_pt = log_sigmoid(signed)
    pt = signed.sigmoid()
    per = -(log_pt * (1.0 - pt) ** gamma) if gamma != 0 else -log_pt
    if alpha is not None:
        per = per * Tensor(alpha * t + (1.0 - alpha) * (1.0 - t))
    if normalizer is None:
        normalizer = max(1.0, float(t.sum()))
    return per.sum() * (1.0 / normalizer)


def l1_loss(p, g) -> Tensor:
    """Sum of absolute coordinate differences per box, averaged over boxes."""
    p, g = _boxes(p), _boxes(g)
    per_box = (p - g).abs().sum(axis=-1)
    return per_box.mean() if per_box.ndim else per_box


@dataclass
class LossReport:
    focal: float
    sawiou: float
    l1: float
    csc: float
    lambda_c: float
    total: float

    def to_record(self) -> str:
        return "".join(f"{f.name} {getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_record(cls, text: str) -> "LossReport":
        values = {}
        for line in text.strip().splitlines():
            key, value = line.split()
            values[key] = float(value)
        return cls(**values)

    def as_dict(self) -> dict:
        return asdict(self)

    def first_nonfinite(self) -> str | None:
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                return f.name
        return None


def total_loss(logits, boxes, gt_boxes, gt_classes, matches, levels, cfg: LossConfig = LossConfig()):
    """Compose focal + SA-WIoU + l1 + lambda_c * CSC.

    ``logits [N, K]`` and ``boxes [N, 4]`` are dense predictions,
    ``matches[g]`` is the prediction index assigned to ground truth ``g``,
    ``levels`` the encoder maps ``(E3, E4, E5)``. Returns ``(total, LossReport)``.
    """
    logits = as_tensor(logits)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(gt_classes, dtype=int).reshape(-1)
    matches = np.asarray(matches, dtype=int).reshape(-1)
    targets = np.zeros(logits.shape)
    targets[matches, classes] = 1.0
    focal = focal_loss(logits, targets, cfg.focal_gamma, cfg.focal_alpha)
    terms = {"focal": focal}
    if len(gt):
        matched = take(as_tensor(boxes), matches)
        terms["sawiou"] = sa_wiou(matched, Tensor(gt), cfg).mean()
        terms["l1"] = l1_loss(matched, Tensor(gt))
        terms["csc"] = csc_loss(*center_embeddings(levels, gt)) if cfg.lambda_c > 0 else None
    total = focal
    for name in ("sawiou", "l1"):
        if name in terms:
            total = total + terms[name]
    if terms.get("csc") is not None:
        total = total + terms["csc"] * cfg.lambda_c
    elif len(gt):
        # report the coherence value even when it does not enter the objective
        terms["csc"] = Tensor(csc_loss(*(e.detach() for e in center_embeddings(levels, gt))).data)

    def val(name):
        t = terms.get(name)
        return 0.0 if t is None else float(t.data)

    report = LossReport(val("focal"), val("sawiou"), val("l1"), val("csc"), cfg.lambda_c, float(total.data))
    return total, report
