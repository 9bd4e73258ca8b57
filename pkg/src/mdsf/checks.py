"""Gradient and oracle check suites shared by the CLI and the tests."""
from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import losses as L
from .attention import MSDA, MSDAConfig, dilated_attention_branch
from .fusion import DFMambaEncoder
from .gradcheck import check_parameters, gradcheck
from .oracles import dense_masked_attention, unrolled_scan
from .pyramid import EFPN, ContrastEnhancement, EdgeAttention, HybridBlock, MultiScaleEnhancer, PyramidSet
from .ssm import MambaMixerBlock, SelectiveInputs, SSMParams, selective_scan
from .synthetic import ModelConfig, SceneConfig, ToyMambaDSF, generate_scene, greedy_match
from .tensor import Tensor

LOSS_TOL = 1e-5
MODULE_TOL = 1e-4


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def random_scan_problem(rng, L=None, C=None, S=None):
    L = L or int(rng.integers(1, 65))
    C = C or int(rng.integers(1, 5))
    S = S or int(rng.integers(1, 9))
    x = rng.standard_normal((L, C))
    delta = rng.uniform(0.05, 1.0, (L, C))
    A = -rng.uniform(0.2, 2.0, (C, S))
    B = rng.standard_normal((L, S))
    Cm = rng.standard_normal((L, S))
    D = rng.standard_normal(C)
    return x, delta, A, B, Cm, D


def scan_oracle_error(trials: int = 20, seed: int = 0, backend=None) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x, delta, A, B, Cm, D = random_scan_problem(rng)
        params = SSMParams.from_arrays(A, D, requires_grad=False)
        y = selective_scan(x, params, SelectiveInputs(delta, B, Cm), backend=backend).data
        worst = max(worst, float(np.abs(y - unrolled_scan(x, delta, A, B, Cm, D)).max()))
    return worst


def msda_oracle_error(trials: int = 20, seed: int = 0, size: int = 8, channels: int = 4) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(trials):
        d = 1 + i % 3
        Q, K, V = (rng.standard_normal((channels, size, size)) for _ in range(3))
        got = dilated_attention_branch(Q, K, V, d).data
        worst = max(worst, float(np.abs(got - dense_masked_attention(Q, K, V, d)).max()))
    return worst


def ssm_suite(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    x, delta, A, B, Cm, D = random_scan_problem(rng, L=12, C=3, S=4)
    W = _probe(rng, (12, 3))
    ts = [Tensor(a) for a in (x, delta, A, B, Cm, D)]

    def scan_loss(x, delta, A, B, Cm, D):
        # raw A (not A_log) so its gradient is checked directly
        y = selective_scan(x, SimpleNamespace(A=A, D=D), SelectiveInputs(delta, B, Cm))
        return (y * W).sum()

    block = MambaMixerBlock(4, 3, rng=rng)
    xb = _probe(rng, (4, 3, 4))
    Wb = _probe(rng, (4, 3, 4))
    return {
        "selective_scan": gradcheck(scan_loss, ts),
        "mamba_mixer_block": check_parameters(lambda: (block(xb) * Wb).sum(), block.parameters() + [xb],
                                              coords_per_tensor=4, seed=seed),
    }


def msda_suite(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    Q, K, V = (_probe(rng, (2, 5, 5)) for _ in range(3))
    W = _probe(rng, (2, 5, 5))
    cfg = MSDAConfig(6, (1, 2, 3))
    mod = MSDA(cfg, rng=rng)
    x = _probe(rng, (6, 5, 5))
    probes = [_probe(rng, (2, 5, 5)) for _ in range(3)]
    return {
        "dilated_attention_branch": max(gradcheck(lambda q, k, v: (dilated_attention_branch(q, k, v, d) * W).sum(),
                                                  [Q, K, V]) for d in (1, 2)),
        "msda": check_parameters(lambda: sum((b * p).sum() for b, p in zip(mod(x), probes)),
                                 mod.parameters() + [x], coords_per_tensor=5, seed=seed),
    }


def _toy_pyramid(rng, channels: int, sizes=(8, 4, 2)) -> PyramidSet:
    return PyramidSet(*(Tensor(rng.standard_normal((channels, s, s))) for s in sizes))


def fusion_suite(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    enc = DFMambaEncoder(8, (1, 2), state_size=3, rng=rng)
    levels = _toy_pyramid(rng, 8)
    probes = [_probe(rng, m.shape) for m in levels]

    def loss():
        return sum((e * p).sum() for e, p in zip(enc(levels), probes))

    return {"dfmamba_encoder": check_parameters(loss, enc.parameters() + list(levels), coords_per_tensor=3, seed=seed)}


def pyramid_suite(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    C = 4
    x = _probe(rng, (C, 6, 6))
    probe = _probe(rng, (C, 6, 6))
    out = {}
    for name, block in {"hybrid_block": HybridBlock(C, 3, rng=rng),
                        "contrast_enhancement": ContrastEnhancement(C, rng=rng),
                        "edge_attention": EdgeAttention(C, rng=rng),
                        "multi_scale_enhancer": MultiScaleEnhancer(C, rng=rng)}.items():
        out[name] = check_parameters(lambda b=block: (b(x) * probe).sum(), block.parameters() + [x],
                                     coords_per_tensor=4, seed=seed)
    fpn = EFPN((3, 5, 6), C, rng=rng)
    maps = [_probe(rng, (c, s, s)) for c, s in ((3, 8), (5, 4), (6, 2))]
    probes = [_probe(rng, (C, s, s)) for s in (8, 4, 2)]
    out["efpn"] = check_parameters(lambda: sum((n * p).sum() for n, p in zip(fpn(maps), probes)),
                                   fpn.parameters() + maps, coords_per_tensor=3, seed=seed)
    return out


def _random_box(rng, lo=0.2, hi=0.8) -> np.ndarray:
    return np.array([rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)])


KINK_MARGIN = 1e-3


def _smooth_pair(rng) -> tuple:
    """Draw a box pair whose edges, centres and sizes are all ``KINK_MARGIN`` apart.

    max/min in IoU, the enclosing box and the l1 term are non-differentiable
    where those coordinates coincide; a central difference straddling such a
    point is not a derivative.
    """
    while True:
        p, g = _random_box(rng), _random_box(rng)
        edges = lambda b: np.concatenate([b[:2] - b[2:] / 2, b[:2] + b[2:] / 2])
        ep, eg = edges(p), edges(g)
        gaps = [ep[[0, 2]][:, None] - eg[[0, 2]][None], ep[[1, 3]][:, None] - eg[[1, 3]][None], p - g]
        if min(np.abs(x).min() for x in gaps) > KINK_MARGIN:
            return p, g


def losses_suite(seed: int = 0, points: int = 10) -> dict:
    rng = np.random.default_rng(seed)
    cfg = L.LossConfig()
    out = {name: 0.0 for name in ("wasserstein_sq", "nwd", "ciou", "sa_wiou", "csc", "focal", "l1")}
    for _ in range(points):
        p, g = (Tensor(b) for b in _smooth_pair(rng))
        out["wasserstein_sq"] = max(out["wasserstein_sq"], gradcheck(lambda p: L.wasserstein_sq(p, g), p))
        out["nwd"] = max(out["nwd"], gradcheck(lambda p: L.nwd_loss(p, g, cfg.tau_w), p))
        out["ciou"] = max(out["ciou"], gradcheck(lambda p: L.ciou_loss(p, g), p))
        out["sa_wiou"] = max(out["sa_wiou"], gradcheck(lambda p: L.sa_wiou(p, g, cfg), p))
        out["l1"] = max(out["l1"], gradcheck(lambda p: L.l1_loss(p, g), p))
        es = [Tensor(rng.standard_normal((3, 5))) for _ in range(3)]
        out["csc"] = max(out["csc"], gradcheck(L.csc_loss, es))
        logits = Tensor(rng.uniform(-2, 2, (6, 3)))
        targets = (rng.uniform(size=(6, 3)) < 0.3).astype(float)
        out["focal"] = max(out["focal"], gradcheck(lambda z: L.focal_loss(z, targets, 2.0, 0.25), logits))
    return out


def model_suite(seed: int = 7, size: int = 32, coords_per_tensor: int | None = None) -> dict:
    model = ToyMambaDSF(ModelConfig(seed=seed, width=6, dilations=(1, 2), state_size=3))
    scene = generate_scene(SceneConfig(size=size, n_targets=2, max_extent=8, seed=seed))
    cfg = L.LossConfig()
    _, boxes, _ = model(scene.image)
    matches = greedy_match(boxes, scene.boxes)

    def loss():
        logits, boxes, levels = model(scene.image)
        return L.total_loss(logits, boxes, scene.boxes, scene.classes, matches, levels, cfg)[0]

    return {"toy_model_total_loss": check_parameters(loss, model.parameters(), coords_per_tensor=coords_per_tensor,
                                                     seed=seed)}


SUITES = {"ssm": ssm_suite, "msda": msda_suite, "fusion": fusion_suite, "pyramid": pyramid_suite,
          "losses": losses_suite, "model": model_suite}


def tolerance(suite: str) -> float:
    return LOSS_TOL if suite == "losses" else MODULE_TOL


def run_gradcheck(module: str = "all", seed: int = 0) -> dict:
    names = list(SUITES) if module == "all" else [module]
    return {name: SUITES[name](seed=seed) for name in names}
