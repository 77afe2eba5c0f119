"""Cross-entropy-method grasp-pose search over (x, y, z, yaw).

Each iteration draws a population from a diagonal gaussian (rejection-
resampling candidates that violate constraints), scores it, refits mean and
per-dimension sigma to the elite set, and stops early once any score reaches
the success threshold. The best-ever sample is returned if the threshold is
never reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import BASE_FRAME, PointCloud, RigidTransform
from .grasp import GraspSample, to_grasp_frame

PSI_RANGE = (-np.pi / 2, np.pi / 2)


class InfeasibleError(RuntimeError):
    """Constraints rejected the whole population within the retry budget."""


class ScorerError(RuntimeError):
    """The scorer returned a non-finite value."""


@dataclass
class CemConfig:
    n_samples: int = 100          # N_CEM
    n_elite: int = 10
    alpha: float = 0.9            # early-stop success probability
    max_iters: int = 3
    init_sigma: tuple[float, float, float, float] = (0.05, 0.05, 0.03, 0.5)
    sigma_floor: tuple[float, float, float, float] = (0.001, 0.001, 0.001, 0.01)
    retry_factor: int = 10        # rejection-resample budget per slot

    def __post_init__(self):
        if not self.n_elite < self.n_samples:
            raise ValueError("need n_elite < n_samples")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class ConstraintPredicate:
    """Pure accept/reject test on grasp samples, with a named reason."""

    name: str
    test: Callable[[GraspSample], bool]

    def __call__(self, s: GraspSample) -> bool:
        return bool(self.test(s))


def workspace_box_constraint(lo: np.ndarray, hi: np.ndarray) -> ConstraintPredicate:
    """Default feasibility stand-in: an axis-aligned box above the table."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return ConstraintPredicate(
        name=f"workspace[{lo.tolist()}..{hi.tolist()}]",
        test=lambda s: bool(np.all(s.p >= lo) and np.all(s.p <= hi)),
    )


@dataclass
class CemResult:
    best_sample: GraspSample
    best_score: float
    iterations: int


def _draw_population(mean: np.ndarray, sigma: np.ndarray, config: CemConfig,
                     constraints: list[ConstraintPredicate],
                     rng: np.random.Generator) -> np.ndarray:
    out = np.empty((config.n_samples, 4))
    for slot in range(config.n_samples):
        for _ in range(config.retry_factor):
            x = rng.normal(mean, sigma)
            x[3] = np.clip(x[3], *PSI_RANGE)
            s = GraspSample.from_array(x)
            if all(c(s) for c in constraints):
                out[slot] = x
                break
        else:
            raise InfeasibleError(
                f"slot {slot}: constraints rejected {config.retry_factor} "
                f"candidates around mean {mean.round(4).tolist()}")
    return out


def cem_optimize(scorer: Callable[[GraspSample], float], init_mean: np.ndarray,
                 config: CemConfig, constraints: list[ConstraintPredicate] | None,
                 rng: np.random.Generator) -> CemResult:
    """Maximize `scorer` over constrained grasp samples.

    The best-ever score is non-decreasing across iterations; all returned
    samples satisfy every constraint and psi stays inside [-pi/2, pi/2].
    """
    constraints = list(constraints or [])
    mean = np.asarray(init_mean, dtype=np.float64).copy()
    mean[3] = np.clip(mean[3], *PSI_RANGE)
    sigma = np.asarray(config.init_sigma, dtype=np.float64).copy()
    floor = np.asarray(config.sigma_floor, dtype=np.float64)

    best_x: np.ndarray | None = None
    best_score = -np.inf
    iterations = 0
    for _ in range(config.max_iters):
        iterations += 1
        xs = _draw_population(mean, sigma, config, constraints, rng)
        scores = np.empty(config.n_samples)
        for i in range(config.n_samples):
            v = float(scorer(GraspSample.from_array(xs[i])))
            if not np.isfinite(v):
                raise ScorerError(f"scorer returned {v} for sample {xs[i].tolist()}")
            scores[i] = v
        order = np.argsort(-scores, kind="stable")
        if scores[order[0]] > best_score:
            best_score = float(scores[order[0]])
            best_x = xs[order[0]].copy()
        if best_score >= config.alpha:
            break
        elite = xs[order[:config.n_elite]]
        mean = elite.mean(axis=0)
        sigma = np.maximum(elite.std(axis=0), floor)
    return CemResult(GraspSample.from_array(best_x), best_score, iterations)


def critic_scorer(critic_model, cloud_camera: PointCloud,
                  cam_to_base: RigidTransform,
                  shuffle_seed: int = 0) -> Callable[[GraspSample], float]:
    """Scorer = critic probability of the grasp-frame-transformed cloud."""
    from .critic import critic_forward  # local import avoids a cycle

    counter = [0]

    def score(s: GraspSample) -> float:
        counter[0] += 1
        rng = np.random.default_rng(shuffle_seed + counter[0])
        grasp_cloud = to_grasp_frame(cloud_camera, s, cam_to_base, rng=rng)
        return critic_forward(critic_model, grasp_cloud)

    return score


def cloud_init_mean(cloud_base: PointCloud) -> np.ndarray:
    """CEM initialization: the cloud centroid (clouds localize objects)."""
    c = cloud_base.centroid()
    return np.array([c[0], c[1], c[2], 0.0])
