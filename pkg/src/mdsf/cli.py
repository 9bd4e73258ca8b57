"""``mdsf`` command-line driver: benchmarks, gradient and oracle checks, loss surfaces, smoke training."""
from __future__ import annotations

import argparse
import csv
import math
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields

import numpy as np

from . import checks
from . import losses as L
from .bench import scan_bench, write_csv
from .errors import ConfigError, MDSFError
from .gradcheck import finite_difference
from .kernels import BACKENDS
from .synthetic import ABLATIONS, SceneConfig, generate_scene, smoke_train
from .tensor import Tensor

GRADCHECK_MODULES = ("all", "ssm", "msda", "fusion", "pyramid", "losses", "model")
SURFACE_LOSSES = {
    "sawiou": lambda p, g: L.sa_wiou(p, g),
    "nwd": lambda p, g: L.nwd_loss(p, g),
    "ciou": lambda p, g: L.ciou_loss(p, g),
}
ORACLE_TOL = 1e-10


@dataclass
class RunConfig:
    subcommand: str
    seed: int = 0
    lengths: tuple = (8192, 16384, 32768)
    reps: int = 9
    backend: str | None = None
    module: str = "all"
    which: str = "scan"
    trials: int = 20
    loss: str = "sawiou"
    sweep: str = "cx"
    points: int = 41
    steps: int = 300
    disable: tuple = ()
    size: int = 64
    out: str | None = None
    toggles: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**values)


def _lengths(text: str) -> tuple:
    try:
        out = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("lengths must be positive integers")
    return out


def _positive(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdsf", allow_abbrev=False,
                                description="Selective-scan and sonar detection kernel checks.")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def cmd(name, help):
        return sub.add_parser(name, help=help, allow_abbrev=False)

    s = cmd("scan-bench", "time the selective scan against dense attention")
    s.add_argument("--lengths", type=_lengths, default=(8192, 16384, 32768))
    s.add_argument("--reps", type=_positive, default=9)
    s.add_argument("--backend", choices=sorted(BACKENDS))
    s.add_argument("--out")

    s = cmd("gradcheck", "autodiff vs central differences")
    s.add_argument("--module", choices=GRADCHECK_MODULES, default="all")
    s.add_argument("--seed", type=int, default=7)

    s = cmd("oracle", "compare fast paths against brute-force oracles")
    s.add_argument("--which", choices=("scan", "msda"), required=True)
    s.add_argument("--trials", type=_positive, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--backend", choices=sorted(BACKENDS))

    s = cmd("loss-surface", "loss and finite-difference gradient along a centre sweep")
    s.add_argument("--loss", choices=sorted(SURFACE_LOSSES), default="sawiou")
    s.add_argument("--sweep", choices=("cx",), default="cx")
    s.add_argument("--points", type=_positive, default=41)
    s.add_argument("--out")

    s = cmd("smoke", "short gradient-descent run on synthetic scenes")
    s.add_argument("--steps", type=_positive, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--disable", choices=sorted(ABLATIONS), nargs="+", default=())
    s.add_argument("--size", type=_positive, default=64)
    s.add_argument("--out")

    s = cmd("scene", "export a synthetic scene as TNSR1 plus annotation text")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_positive, default=64)
    s.add_argument("--out", required=True, help="path prefix for <out>.tnsr and <out>.txt")
    return p


@contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def run_scan_bench(cfg: RunConfig) -> int:
    rows = scan_bench(cfg.lengths, cfg.reps, cfg.backend)
    with _output(cfg.out) as fh:
        write_csv(rows, fh)
    return 0


def run_gradcheck(cfg: RunConfig) -> int:
    ok = True
    for suite, results in checks.run_gradcheck(cfg.module, cfg.seed).items():
        tol = checks.tolerance(suite)
        for name, err in results.items():
            passed = math.isfinite(err) and err <= tol
            ok &= passed
            print(f"{suite}.{name}\t{err:.3e}\t{'ok' if passed else 'FAIL'} (tol {tol:g})")
    return 0 if ok else 1


def run_oracle(cfg: RunConfig) -> int:
    if cfg.which == "scan":
        err = checks.scan_oracle_error(cfg.trials, cfg.seed, cfg.backend)
    else:
        err = checks.msda_oracle_error(cfg.trials, cfg.seed)
    passed = err <= ORACLE_TOL
    print(f"{cfg.which}\tmax_abs_err {err:.3e}\t{'ok' if passed else 'FAIL'}")
    return 0 if passed else 1


def surface_rows(loss: str, points: int = 41):
    """Predicted box slides from well left of a tiny target (area 9e-4) onto it."""
    gt = Tensor(np.array([0.5, 0.5, 0.03, 0.03]))
    fn = SURFACE_LOSSES[loss]
    rows = []
    for offset in np.linspace(-0.2, 0.0, points):
        p = Tensor(np.array([0.5 + offset, 0.5, 0.03, 0.03]))
        value = float(fn(p, gt).data)
        grad = finite_difference(lambda: fn(p, gt), p, (0,))
        iou_value = float(L.iou_loss(p, gt).data)
        iou_grad = finite_difference(lambda: L.iou_loss(p, gt), p, (0,))
        rows.append((float(offset), value, grad, iou_value, iou_grad))
    return rows


def run_loss_surface(cfg: RunConfig) -> int:
    with _output(cfg.out) as fh:
        w = csv.writer(fh)
        w.writerow(["offset", "loss", "fd_grad", "iou_loss", "iou_fd_grad"])
        w.writerows(surface_rows(cfg.loss, cfg.points))
    return 0


def run_smoke(cfg: RunConfig) -> int:
    history = smoke_train(steps=cfg.steps, seed=cfg.seed, size=cfg.size, disable=cfg.disable)
    with _output(cfg.out) as fh:
        w = csv.writer(fh)
        names = list(history[0].as_dict())
        w.writerow(["step", *names])
        for i, rep in enumerate(history):
            w.writerow([i, *(rep.as_dict()[n] for n in names)])
    ratio = history[-1].total / history[0].total
    print(f"total {history[0].total:.6g} -> {history[-1].total:.6g} (ratio {ratio:.3f})", file=sys.stderr)
    return 0


def run_scene(cfg: RunConfig) -> int:
    scene = generate_scene(SceneConfig(size=cfg.size, seed=cfg.seed))
    for path in scene.save(cfg.out):
        print(path)
    return 0


COMMANDS = {"scan-bench": run_scan_bench, "gradcheck": run_gradcheck, "oracle": run_oracle,
            "loss-surface": run_loss_surface, "smoke": run_smoke, "scene": run_scene}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_mapping(vars(args))
        return COMMANDS[cfg.subcommand](cfg)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"mdsf: error: {exc}", file=sys.stderr)
        return 2
    except MDSFError as exc:
        print(f"mdsf: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
