"""Class-prior and posterior estimation from classifier scores.

Scores of labelled (positive) and unlabelled instances are turned into two
densities on (0, 1). Their ratio ``r = f_pos / f_unl`` at each unlabelled
score drives everything else: the prior upper bound ``alpha_star`` is a low
quantile of ``1 / r``, and the posterior of being suspicious is
``1 - alpha * r`` clamped to [0, 1].

Densities are Gaussian KDEs in logit space, so boundary mass near 0 and 1
is handled by the change of variables rather than reflection.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

logger = logging.getLogger(__name__)

SCORE_EPS = 1e-12
RATIO_FLOOR = 1e-8
DEFAULT_QUANTILE = 0.05
DEFAULT_THRESHOLD = 0.96


class DegenerateScores(ValueError):
    pass


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), SCORE_EPS, 1.0 - SCORE_EPS)
    return np.log(p) - np.log1p(-p)


def expit(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    std = float(np.std(x))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    return 0.9 * spread * len(x) ** (-0.2)


@dataclass(frozen=True)
class Grid:
    """Uniform grid in logit space; ``scores`` is its image on (0, 1)."""

    z: np.ndarray

    @property
    def step(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def scores(self) -> np.ndarray:
        return expit(self.z)

    @classmethod
    def covering(cls, *samples, bandwidth: float, points_per_bandwidth: int = 25,
                 min_points: int = 2048, max_points: int = 1 << 18) -> "Grid":
        """Grid spanning every sample with six bandwidths of margin."""
        zs = np.concatenate([logit(s) for s in samples])
        lo = float(zs.min()) - 6.0 * bandwidth
        hi = float(zs.max()) + 6.0 * bandwidth
        n = int(math.ceil((hi - lo) / bandwidth * points_per_bandwidth)) + 1
        n = min(max(n, min_points), max_points)
        return cls(z=np.linspace(lo, hi, n))

    def same_as(self, other: "Grid") -> bool:
        return self.z.shape == other.z.shape and bool(np.array_equal(self.z, other.z))


@dataclass(frozen=True)
class DensityEstimate:
    samples: np.ndarray  # scores in (0, 1)
    bandwidth: float  # in logit units
    grid: Grid
    logit_density: np.ndarray  # density of logit(score) on grid.z

    @property
    def density(self) -> np.ndarray:
        """Density on the score axis at ``grid.scores``."""
        s = self.grid.scores
        return self.logit_density / (s * (1.0 - s))

    def __call__(self, scores) -> np.ndarray:
        s = np.clip(np.asarray(scores, dtype=np.float64), SCORE_EPS, 1.0 - SCORE_EPS)
        g = np.interp(logit(s), self.grid.z, self.logit_density, left=0.0, right=0.0)
        return g / (s * (1.0 - s))

    def integral(self) -> float:
        """Trapezoid integral of the score-axis density over (0, 1)."""
        s = self.grid.scores
        return float(np.trapezoid(self.density, s))


def kde_fit(scores, bandwidth: float | str = "auto", grid: Grid | None = None) -> DensityEstimate:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise DegenerateScores("no scores")
    if np.any((scores < 0) | (scores > 1)) or not np.isfinite(scores).all():
        raise ValueError("scores must lie in [0, 1]")
    z = logit(scores)
    if bandwidth == "auto":
        if scores.size < 10:
            raise DegenerateScores(f"need at least 10 scores for an automatic bandwidth, got {scores.size}")
        if np.ptp(z) == 0:
            raise DegenerateScores("degenerate score distribution")
        h = silverman_bandwidth(z)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError("bandwidth must be positive")
    if grid is None:
        grid = Grid.covering(scores, bandwidth=h)
    return DensityEstimate(samples=scores, bandwidth=h, grid=grid, logit_density=_binned_kde(z, h, grid))


def _binned_kde(z: np.ndarray, h: float, grid: Grid) -> np.ndarray:
    dz = grid.step
    m = grid.z.size
    pos = (z - grid.z[0]) / dz
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    inside = (lo >= 0) & (lo < m - 1)
    if not inside.all():
        logger.warning("%d scores fall outside the density grid", int((~inside).sum()))
    counts = np.bincount(lo[inside], weights=1.0 - frac[inside], minlength=m)
    counts += np.bincount(lo[inside] + 1, weights=frac[inside], minlength=m)[:m]
    half = int(math.ceil(6.0 * h / dz))
    offsets = np.arange(-half, half + 1) * dz
    kernel = np.exp(-0.5 * (offsets / h) ** 2)
    kernel /= kernel.sum() * dz  # exact unit mass on the grid, even when dz is coarse
    if half >= m:
        dens = np.convolve(counts, kernel, mode="full")[half:half + m]
    else:
        dens = fftconvolve(counts, kernel, mode="same")
    dens = np.maximum(dens, 0.0)  # FFT round-off
    return dens / z.size


def fit_pair(positive_scores, unlabelled_scores, bandwidth: float | str = "auto"):
    """Fit both densities with one bandwidth on one shared grid."""
    pos = np.asarray(positive_scores, dtype=np.float64)
    unl = np.asarray(unlabelled_scores, dtype=np.float64)
    if bandwidth == "auto":
        for name, sample in (("positive", pos), ("unlabelled", unl)):
            if sample.size < 10:
                raise DegenerateScores(f"need at least 10 {name} scores, got {sample.size}")
            if np.ptp(logit(sample)) == 0:
                raise DegenerateScores(f"degenerate score distribution ({name})")
        # one shared bandwidth: smoothing is linear, so the mixture identity
        # f_unl = a f_pos + (1 - a) f_neg survives it and the ratio stays <= 1 / a.
        # The wider of the two rules: boosted-tree scores are clumpy, and a
        # narrow kernel turns the clumps into ratio noise that biases the
        # low quantile downwards.
        h = max(silverman_bandwidth(logit(pos)), silverman_bandwidth(logit(unl)))
    else:
        h = float(bandwidth)
    grid = Grid.covering(pos, unl, bandwidth=h)
    return kde_fit(pos, h, grid), kde_fit(unl, h, grid)


def density_ratio(pos: DensityEstimate, unl: DensityEstimate, at) -> np.ndarray:
    """``f_pos / f_unl`` at the given scores, denominator floored at 1e-8."""
    if not pos.grid.same_as(unl.grid):
        raise ValueError("densities were estimated on different grids")
    num = pos(at)
    den = np.maximum(unl(at), RATIO_FLOOR)
    return num / den


def estimate_alpha_star(ratios, q: float = DEFAULT_QUANTILE) -> float:
    """Quantile surrogate for the infimum of ``f_unl / f_pos``."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size == 0:
        raise ValueError("no ratios")
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    positive = ratios[ratios > 0]
    if positive.size == 0:
        warnings.warn("all density ratios are zero; alpha_star set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.clip(np.quantile(1.0 / positive, q), 0.0, 1.0))


@dataclass(frozen=True)
class EmResult:
    alpha: float
    converged: bool
    n_iter: int


def em_refine(ratios, alpha_init: float, tol: float = 1e-6, max_iter: int = 1000,
              alpha_max: float | None = None) -> EmResult:
    """Iterate ``alpha <- mean(min(1, alpha * r))`` from ``alpha_init``.

    The map is monotone in alpha, so starting from the top it descends to the
    largest fixed point below ``alpha_init``. The result is clamped to
    ``[0, alpha_max]`` (``alpha_max`` defaults to ``alpha_init``).
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if not 0 <= alpha_init <= 1:
        raise ValueError("alpha_init must be in [0, 1]")
    alpha_max = alpha_init if alpha_max is None else alpha_max
    alpha = float(alpha_init)
    for it in range(1, max_iter + 1):
        new = float(np.mean(np.minimum(1.0, alpha * ratios)))
        if abs(new - alpha) < tol:
            return EmResult(float(np.clip(new, 0.0, alpha_max)), True, it)
        alpha = new
    logger.warning("em_refine did not converge in %d iterations", max_iter)
    return EmResult(float(np.clip(alpha, 0.0, alpha_max)), False, max_iter)


def stabilize_ratios(ratios, alpha_star: float) -> np.ndarray:
    """Ratios prepared for ``em_refine``.

    Capped at ``1 / alpha_star`` (the same quantile that defines
    ``alpha_star``) and rescaled to unit mean, which is the empirical form of
    ``E_unl[f_pos / f_unl] = 1``. Without the rescaling a mean slightly below
    one drags the iteration to the trivial fixed point 0; without the cap the
    largest fixed point is ``1 / max(r)``, i.e. the raw, noise-driven infimum.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if alpha_star > 0:
        ratios = np.minimum(ratios, 1.0 / alpha_star)
    mean = ratios.mean()
    return ratios / mean if mean > 0 else ratios


def posteriors(ratios, alpha: float) -> np.ndarray:
    """P(suspicious | score) = clamp(1 - alpha * r, 0, 1)."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    return np.clip(1.0 - alpha * np.asarray(ratios, dtype=np.float64), 0.0, 1.0)


def cluster_mass(post, threshold: float = DEFAULT_THRESHOLD) -> float:
    post = np.asarray(post)
    return float(np.mean(post > threshold)) if post.size else 0.0


@dataclass
class PosteriorResult:
    alpha_star: float
    alpha_em: float
    em_converged: bool
    posteriors: np.ndarray  # per unlabelled instance, computed with alpha_star
    ratios: np.ndarray
    pos_density: DensityEstimate
    unl_density: DensityEstimate
    threshold: float
    cluster_mass: float


def run(scores, labels, q: float = DEFAULT_QUANTILE, bandwidth: float | str = "auto",
        threshold: float = DEFAULT_THRESHOLD) -> PosteriorResult:
    """Full correction step: labels are 1 for labelled positives, 0 for unlabelled."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos_scores = scores[labels == 1]
    unl_scores = scores[labels == 0]
    pos, unl = fit_pair(pos_scores, unl_scores, bandwidth)
    ratios = density_ratio(pos, unl, unl_scores)
    alpha_star = estimate_alpha_star(ratios, q)
    em = em_refine(stabilize_ratios(ratios, alpha_star), alpha_star)
    post = posteriors(ratios, alpha_star)
    return PosteriorResult(
        alpha_star=alpha_star,
        alpha_em=em.alpha,
        em_converged=em.converged,
        posteriors=post,
        ratios=ratios,
        pos_density=pos,
        unl_density=unl,
        threshold=threshold,
        cluster_mass=cluster_mass(post, threshold),
    )
