"""Synthetic speckled sonar scenes and a desk-scale detector assembled from the package blocks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tnsr
from .errors import ConfigError, GenerationError, TrainingError
from .functional import conv2d, layer_norm, pointwise
from .fusion import DFMambaEncoder
from .losses import LossConfig, LossReport, total_loss
from .nn import Module, param, uniform
from .pyramid import EFPN, HybridBlock, PyramidSet
from .ssm import MambaMixerBlock
from .tensor import Tensor, as_tensor, concat


@dataclass(frozen=True)
class SceneConfig:
    size: int = 64
    n_targets: int = 3
    contrast: float = 4.0
    speckle: float = 1.0
    background: float = 0.1
    n_classes: int = 3
    min_extent: int = 3
    max_extent: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.contrast <= 0:
            raise ConfigError("contrast must be positive")
        if not 0.0 <= self.speckle <= 1.0:
            raise ConfigError("speckle strength must lie in [0, 1]")


@dataclass
class SyntheticScene:
    image: np.ndarray  # [1, H, W] in [0, 1]
    boxes: np.ndarray  # [n, 4] normalized (cx, cy, w, h)
    classes: np.ndarray  # [n]
    seed: int

    def annotation_text(self) -> str:
        # repr of a Python float round-trips exactly
        return "".join(f"{int(c)} " + " ".join(repr(float(v)) for v in b) + "\n"
                       for c, b in zip(self.classes, self.boxes))

    def save(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.tnsr`` (image) and ``<prefix>.txt`` (``class cx cy w h`` per line)."""
        prefix = Path(prefix)
        img, ann = prefix.with_suffix(".tnsr"), prefix.with_suffix(".txt")
        tnsr.save(img, self.image)
        ann.write_text(self.annotation_text())
        return img, ann

    @classmethod
    def load(cls, prefix, seed: int = -1) -> "SyntheticScene":
        prefix = Path(prefix)
        image = tnsr.load(prefix.with_suffix(".tnsr"))
        rows = [line.split() for line in prefix.with_suffix(".txt").read_text().splitlines() if line.strip()]
        classes = np.array([int(r[0]) for r in rows], dtype=int)
        boxes = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(-1, 4)
        return cls(image, boxes, classes, seed)


def _smooth_field(rng, size: int) -> np.ndarray:
    """Zero-mean low-frequency field built from a few random plane waves, amplitude <= 1."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.zeros((size, size))
    for _ in range(3):
        fy, fx = rng.integers(0, 3, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return out / 3.0


def generate_scene(cfg: SceneConfig = SceneConfig()) -> SyntheticScene:
    """Low-frequency background with Gaussian-blob targets under multiplicative speckle.

    Target centres sit on pixel centres; a target's box spans +-2 sigma.
    Speckle gain is ``1 - s + s * Exp(1)`` (mean 1). The result is clipped
    to [0, 1].
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.size
    bg = cfg.background * (1.0 + 0.2 * _smooth_field(rng, n))
    boxes, classes, placed = [], [], []
    for _ in range(cfg.n_targets):
        for _attempt in range(200):
            w, h = rng.integers(cfg.min_extent, cfg.max_extent + 1, size=2)
            if w > n or h > n:
                raise GenerationError(f"target extent {w}x{h} does not fit a {n}x{n} image")
            x0 = rng.integers(int(math.ceil(w / 2)), n - int(math.ceil(w / 2)) + 1)
            y0 = rng.integers(int(math.ceil(h / 2)), n - int(math.ceil(h / 2)) + 1)
            cx, cy = min(x0, n - 1) + 0.5, min(y0, n - 1) + 0.5
            rect = (cx - w / 2 - 1, cy - h / 2 - 1, cx + w / 2 + 1, cy + h / 2 + 1)
            inside = rect[0] + 1 >= 0 and rect[1] + 1 >= 0 and rect[2] - 1 <= n and rect[3] - 1 <= n
            clear = all(rect[2] <= r[0] or r[2] <= rect[0] or rect[3] <= r[1] or r[3] <= rect[1] for r in placed)
            if inside and clear:
                break
        else:
            raise GenerationError(f"could not place {cfg.n_targets} non-overlapping targets in {n}x{n}")
        placed.append(rect)
        boxes.append([cx / n, cy / n, w / n, h / n])
        classes.append(int(rng.integers(0, cfg.n_classes)))

    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    targets = np.zeros((n, n))
    for cx, cy, w, h in boxes:
        sx, sy = w * n / 4.0, h * n / 4.0
        targets += np.exp(-0.5 * (((xx - cx * n) / sx) ** 2 + ((yy - cy * n) / sy) ** 2))
    clean = bg + cfg.background * cfg.contrast * targets
    gain = 1.0 - cfg.speckle + cfg.speckle * rng.exponential(1.0, size=(n, n))
    image = np.clip(clean * gain, 0.0, 1.0)[None]
    return SyntheticScene(image, np.array(boxes).reshape(-1, 4), np.array(classes, dtype=int), cfg.seed)


@dataclass(frozen=True)
class ModelConfig:
    width: int = 12
    state_size: int = 4
    n_classes: int = 3
    dilations: tuple = (1, 2, 3)
    seed: int = 0
    disable: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "disable", frozenset(self.disable))
        unknown = self.disable - ABLATIONS
        if unknown:
            raise ConfigError(f"unknown ablation(s) {sorted(unknown)}; choose from {sorted(ABLATIONS)}")


CLASS_PRIOR = 0.01
ABLATIONS = frozenset({"hybrid", "alpha", "csc", "omega"})


class ToyMambaDSF(Module):
    """Stem (three stride-2 3x3 convs) -> two mixer stages -> hybrid block -> E-FPN -> encoder -> dense head.

    The head is a shared 1x1 conv emitting ``n_classes`` logits and four box
    parameters per cell of E3, E4, E5. Boxes decode as
    ``cx = (j + 0.5 + tanh(r0)) / W``, ``cy`` likewise, ``w, h = sigmoid(r2), sigmoid(r3)``.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        rng = np.random.default_rng(cfg.seed)
        C, S = cfg.width, cfg.state_size
        self.cfg = cfg
        self.stem = [uniform(rng, (C, 1, 3, 3), 9), uniform(rng, (C, C, 3, 3), 9 * C), uniform(rng, (C, C, 3, 3), 9 * C)]
        self.stem_b = [param(np.zeros(C)) for _ in range(3)]
        self.stage1 = MambaMixerBlock(C, S, rng=rng)
        self.down = [uniform(rng, (C, C, 3, 3), 9 * C) for _ in range(2)]
        self.stage2 = MambaMixerBlock(C, S, rng=rng)
        self.hybrid = HybridBlock(C, S, rng=rng)
        self.efpn = EFPN((C, C, C), C, rng=rng)
        # channel norm on the neck outputs keeps the encoder gates in their responsive range
        self.neck_w = [param(np.ones((C, 1, 1))) for _ in range(3)]
        self.neck_b = [param(np.zeros((C, 1, 1))) for _ in range(3)]
        self.encoder = DFMambaEncoder(C, cfg.dilations, S, rng=rng)
        self.head_w = uniform(rng, (cfg.n_classes + 4, C), C)
        # class logits start at the foreground prior so the dense negatives do not swamp the loss
        self.head_b = param(np.concatenate([np.full(cfg.n_classes, -np.log((1 - CLASS_PRIOR) / CLASS_PRIOR)),
                                            np.zeros(4)]))
        if "hybrid" in cfg.disable:
            self.hybrid.w_local = Tensor(np.array(0.0))
            self.hybrid.w_global = Tensor(np.array(0.0))
        if "alpha" in cfg.disable:
            self.encoder.set_alpha(0.0, trainable=False)

    def backbone(self, image):
        x = as_tensor(image)
        for w, b in zip(self.stem, self.stem_b):
            x = conv2d(x, w, b, stride=2).silu()
        f3 = self.stage1(x)
        f4 = self.hybrid(self.stage2(conv2d(f3, self.down[0], stride=2).silu()))
        f5 = conv2d(f4, self.down[1], stride=2).silu()
        return f3, f4, f5

    def forward(self, image):
        """Returns ``(logits [N, K], boxes [N, 4], encoder PyramidSet)``; cells ordered E3, E4, E5 row-major."""
        image = as_tensor(image)
        _, H, W = image.shape
        if H % 32 or W % 32:
            raise ConfigError(f"input size {H}x{W} must be divisible by 32")
        necks = self.efpn(self.backbone(image))
        levels = self.encoder(PyramidSet(*(layer_norm(n, axis=0, weight=w, bias=b)
                                           for n, w, b in zip(necks, self.neck_w, self.neck_b))))
        K = self.cfg.n_classes
        logits, boxes = [], []
        for fmap in levels:
            _, h, w = fmap.shape
            out = pointwise(fmap, self.head_w, self.head_b).reshape(K + 4, h * w).transpose()
            logits.append(out[:, :K])
            jj, ii = np.meshgrid(np.arange(w), np.arange(h))
            grid_x = Tensor((jj.ravel() + 0.5) / w)
            grid_y = Tensor((ii.ravel() + 0.5) / h)
            cx = grid_x + out[:, K].tanh() * (1.0 / w)
            cy = grid_y + out[:, K + 1].tanh() * (1.0 / h)
            wh = out[:, K + 2 :].sigmoid()
            boxes.append(concat([cx.reshape(-1, 1), cy.reshape(-1, 1), wh], axis=1))
        return concat(logits, axis=0), concat(boxes, axis=0), levels


def greedy_match(pred_boxes, gt_boxes) -> np.ndarray:
    """Assign each ground truth a distinct prediction, closest centres first."""
    pred = np.asarray(pred_boxes.data if isinstance(pred_boxes, Tensor) else pred_boxes)
    gt = np.asarray(gt_boxes).reshape(-1, 4)
    dist = np.hypot(pred[None, :, 0] - gt[:, None, 0], pred[None, :, 1] - gt[:, None, 1])
    matches = np.full(len(gt), -1, dtype=int)
    for _ in range(min(len(gt), len(pred))):
        g, p = np.unravel_index(np.argmin(dist), dist.shape)
        matches[g] = p
        dist[g, :] = np.inf
        dist[:, p] = np.inf
    return matches


def scene_loss(model: ToyMambaDSF, scene: SyntheticScene, cfg: LossConfig):
    logits, boxes, levels = model(scene.image)
    matches = greedy_match(boxes, scene.boxes)
    return total_loss(logits, boxes, scene.boxes, scene.classes, matches, levels, cfg)


def _mean_reports(reports) -> LossReport:
    keys = ("focal", "sawiou", "l1", "csc", "lambda_c", "total")
    return LossReport(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in keys})


def smoke_train(steps: int = 300, lr: float = 0.05, seed: int = 0, n_scenes: int = 2, size: int = 64,
                disable=(), loss_cfg: LossConfig | None = None, model_cfg: ModelConfig | None = None) -> list:
    """Full-batch gradient descent on a fixed set of generated scenes.

    Returns one averaged :class:`LossReport` per step (measured before that
    step's update). Raises :class:`TrainingError` on a non-finite loss.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    disable = frozenset(disable)
    loss_cfg = loss_cfg or LossConfig()
    if "csc" in disable:
        loss_cfg = replace(loss_cfg, lambda_c=0.0)
    if "omega" in disable:
        loss_cfg = replace(loss_cfg, force_omega=0.0)
    model_cfg = replace(model_cfg or ModelConfig(seed=seed), disable=disable)
    model = ToyMambaDSF(model_cfg)
    scenes = [generate_scene(SceneConfig(size=size, n_classes=model_cfg.n_classes, seed=seed * 1000 + i))
              for i in range(n_scenes)]
    params = model.parameters()
    history = []
    for step in range(steps):
        model.zero_grad()
        reports = []
        total = None
        for scene in scenes:
            loss, report = scene_loss(model, scene, loss_cfg)
            reports.append(report)
            total = loss if total is None else total + loss
        report = _mean_reports(reports)
        bad = report.first_nonfinite()
        if bad is not None:
            raise TrainingError(f"non-finite {bad} loss at step {step}")
        history.append(report)
        (total * (1.0 / len(scenes))).backward()
        for p in params:
            if p.grad is not None:
                p.data -= lr * p.grad
    return history
