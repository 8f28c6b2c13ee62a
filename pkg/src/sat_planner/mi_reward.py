"""Mutual-information reward under a limited field of view.

The predicted measurement ``z`` is a mixed random variable: with
probability ``p_empty`` the target is outside the FOV and nothing is
observed, otherwise ``z`` follows a Gaussian mixture with one component
per in-FOV particle, all sharing the measurement covariance. Its entropy
splits into a discrete part ``-p_empty ln p_empty`` and the differential
entropy ``H_r`` of the unnormalised in-FOV mixture. ``H_r`` is
approximated with sigma points, which is exact for a single component.

The reward is ``H(z) - H(z | x)``. All entropies are in nats.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from sat_planner.belief import JointBeliefState, ParticleBelief, cluster_by_grid
from sat_planner.config import MiConfig, SensorConfig
from sat_planner.environment import OccupancyGrid, PoseLike, visible_mask, wrap_angle
from sat_planner.errors import InputDomainError, InternalInvariantError, NumericDomainError
from sat_planner.models import (
    RobotControl,
    SystemModel,
    assumed_target_dynamics,
    measurement_function,
    step_robot,
)

logger = logging.getLogger(__name__)

_MASS_TOL = 1e-9
_TRUNCATION_SIGMAS = 5.0
_MC_CHUNK_ELEMENTS = 4_000_000
_TINY = float(np.finfo(float).tiny)

# Range-bearing measurements wrap in their second coordinate.
RANGE_BEARING_ANGULAR = (1,)


# ── Types ──────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class PredictedGmm:  # pylint: disable=too-many-instance-attributes
    """Predicted measurement density for one candidate robot pose.

    ``means`` has shape ``(K, m)``; ``weights`` are the particle weights
    of the in-FOV particles and sum to ``1 - p_empty``. ``sources`` holds
    the state-space positions the components came from (used by
    truncation) and defaults to ``means``. ``angular_dims`` lists the
    measurement coordinates whose differences are wrapped to
    ``(-pi, pi]``.
    """

    means: NDArray[np.float64]
    weights: NDArray[np.float64]
    cov: NDArray[np.float64]
    p_empty: float
    sources: Optional[NDArray[np.float64]] = None
    angular_dims: Tuple[int, ...] = ()
    _chol: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        cov = np.array(self.cov, dtype=float, ndmin=2)
        m = cov.shape[0]
        means = np.array(self.means, dtype=float).reshape(-1, m)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if len(weights) != len(means):
            raise InternalInvariantError("one weight per component is required")
        if (weights < 0).any():
            raise InternalInvariantError("component weights must be non-negative")
        total = float(weights.sum()) + float(self.p_empty)
        if not 0.0 <= self.p_empty <= 1.0 + _MASS_TOL or abs(total - 1.0) > _MASS_TOL:
            raise InternalInvariantError(
                f"p_empty + component weights = {total:.12f}, expected 1"
            )
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericDomainError("measurement covariance must be positive definite") from exc
        sources = means if self.sources is None else np.array(self.sources, dtype=float)
        if len(sources) != len(means):
            raise InternalInvariantError("one source point per component is required")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "p_empty", float(min(max(self.p_empty, 0.0), 1.0)))
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return int(self.cov.shape[0])

    @property
    def n_components(self) -> int:
        return int(len(self.weights))

    @property
    def detect_mass(self) -> float:
        return float(self.weights.sum())

    def differences(self, z: NDArray[np.float64], mu: NDArray[np.float64]) -> NDArray[np.float64]:
        """``z - mu`` with broadcasting, angular coordinates wrapped."""
        diff = z - mu
        for dim in self.angular_dims:
            diff[..., dim] = wrap_angle(diff[..., dim])
        return diff

    @property
    def log_peak(self) -> float:
        """log N(0; 0, cov)."""
        log_det = 2.0 * float(np.log(np.diag(self._chol)).sum())
        return -0.5 * (log_det + self.dim * math.log(2 * math.pi))

    def whiten(self, diff: NDArray[np.float64]) -> NDArray[np.float64]:
        """``L^-1 diff`` over the last axis, where ``cov = L L^T``."""
        flat = np.asarray(diff, dtype=float).reshape(-1, self.dim)
        white = solve_triangular(self._chol, flat.T, lower=True).T
        return white.reshape(np.shape(diff))  # type: ignore[no-any-return]

    def log_normal(self, diff: NDArray[np.float64]) -> NDArray[np.float64]:
        """log N(diff; 0, cov) over the last axis."""
        white = self.whiten(diff)
        return self.log_peak - 0.5 * np.einsum("...i,...i->...", white, white)  # type: ignore[no-any-return]

    def needs_no_wrap(self, points: NDArray[np.float64]) -> bool:
        """True when no difference between ``points`` and the means needs wrapping."""
        if not self.angular_dims:
            return True
        dims = list(self.angular_dims)
        values = np.concatenate((points[:, dims], self.means[:, dims]))
        return bool((np.ptp(values, axis=0) < math.pi).all())


@dataclass(frozen=True, eq=False)
class SigmaPointSet:
    """``2m + 1`` points matching the first two moments of N(mu, Sigma)."""

    points: NDArray[np.float64]
    weights: NDArray[np.float64]
    lam: float


@dataclass(frozen=True)
class EntropyEstimate:
    """Monte-Carlo estimate with its standard error."""

    value: float
    stderr: float


# ── Sigma points ───────────────────────────────────────────────────────


def _sqrt_spd(matrix: NDArray[np.float64]) -> NDArray[np.float64]:
    """Symmetric square root of an SPD matrix."""
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-14):
        raise NumericDomainError("covariance must be symmetric")
    eigvals, eigvecs = np.linalg.eigh(matrix)
    if eigvals.min() <= 0:
        raise NumericDomainError("covariance must be positive definite")
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T  # type: ignore[no-any-return]


def _sigma_offsets(cov: NDArray[np.float64], lam: float) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    m = cov.shape[0]
    if not lam + m > 0:
        raise NumericDomainError(f"lam + m must be positive (lam={lam}, m={m})")
    root = _sqrt_spd((lam + m) * cov)
    offsets = np.vstack((np.zeros(m), root.T, -root.T))
    weights = np.full(2 * m + 1, 1.0 / (2.0 * (lam + m)))
    weights[0] = lam / (lam + m)
    return offsets, weights


def sigma_points(mu: ArrayLike, Sigma: ArrayLike, lam: float) -> SigmaPointSet:
    """Point 0 is ``mu``; points ``1..m`` and ``m+1..2m`` add and subtract the
    columns of the symmetric square root of ``(lam + m) Sigma``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    cov = np.array(Sigma, dtype=float, ndmin=2)
    if cov.shape != (len(mu), len(mu)):
        raise NumericDomainError("Sigma does not match the dimension of mu")
    offsets, weights = _sigma_offsets(cov, lam)
    return SigmaPointSet(mu + offsets, weights, float(lam))


# ── Predicted mixture ──────────────────────────────────────────────────


def gmm_from_particles(
    pose: PoseLike,
    states: NDArray[np.float64],
    weights: NDArray[np.float64],
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    Sigma: ArrayLike,
) -> PredictedGmm:
    """Measurement mixture seen from ``pose`` for particles at ``states``."""
    states = np.asarray(states, dtype=float).reshape(-1, 2)
    weights = np.asarray(weights, dtype=float)
    inside = visible_mask(pose, states, sensor, grid) & (weights > 0)
    p_empty = float(weights[~inside].sum())
    return PredictedGmm(
        measurement_function(pose, states[inside]),
        weights[inside],
        np.asarray(Sigma, dtype=float),
        p_empty,
        sources=states[inside],
        angular_dims=RANGE_BEARING_ANGULAR,
    )


def _fold_process_noise(
    Sigma: NDArray[np.float64], Q: NDArray[np.float64], mean_range: float
) -> NDArray[np.float64]:
    """Inflate Sigma by Q mapped isotropically into range and bearing."""
    per_axis = 0.5 * float(np.trace(Q))
    folded = np.array(Sigma, dtype=float)
    folded[0, 0] += per_axis
    folded[1, 1] += per_axis / max(mean_range, 1.0) ** 2
    return folded


def predict_gmm(
    B: JointBeliefState,
    a: RobotControl,
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    models: SystemModel,
    cfg: Optional[MiConfig] = None,
) -> PredictedGmm:
    """Mixture after taking action ``a``; particles follow the mean dynamics only."""
    pose = step_robot(B.robot, a, models.dt)
    states = assumed_target_dynamics(B.belief.states)
    gmm = gmm_from_particles(pose, states, B.belief.weights, sensor, grid, models.noise.Sigma)
    if cfg is not None and cfg.fold_process_noise and gmm.n_components:
        mean_range = float(gmm.weights @ gmm.means[:, 0] / gmm.detect_mass)
        gmm = PredictedGmm(
            gmm.means,
            gmm.weights,
            _fold_process_noise(gmm.cov, models.noise.Q, mean_range),
            gmm.p_empty,
            sources=gmm.sources,
            angular_dims=gmm.angular_dims,
        )
    return gmm


# ── Entropies ──────────────────────────────────────────────────────────


def conditional_entropy(g: PredictedGmm) -> float:
    """H(z | x): Gaussian entropy of the shared covariance times the in-FOV mass."""
    if g.n_components == 0:
        return 0.0
    _, log_det = np.linalg.slogdet(g.cov)
    m = g.dim
    return (1.0 - g.p_empty) * (0.5 * m * (math.log(2 * math.pi) + 1.0) + 0.5 * float(log_det))


def _empty_entropy(p_empty: float) -> float:
    return -p_empty * math.log(p_empty) if p_empty > 0 else 0.0


def resolve_truncation_radius(g: PredictedGmm, cfg: MiConfig) -> float:
    """Truncation radius in state space; ``inf`` disables truncation.

    ``"auto"`` puts five standard deviations of the measurement noise at
    the mean component range. Without angular coordinates the largest
    noise axis is used.
    """
    if cfg.truncation_radius != "auto":
        return float(cfg.truncation_radius)
    if g.n_components == 0:
        return math.inf
    if g.angular_dims == RANGE_BEARING_ANGULAR and g.dim == 2:
        mean_range = float(g.weights @ g.means[:, 0] / g.detect_mass)
        sigma_r, sigma_b = np.sqrt(np.diag(g.cov))
        return _TRUNCATION_SIGMAS * max(float(sigma_r), mean_range * float(sigma_b))
    return _TRUNCATION_SIGMAS * math.sqrt(float(np.linalg.eigvalsh(g.cov).max()))


def _sigma_log_densities_dense(g: PredictedGmm, offsets: NDArray[np.float64]) -> NDArray[np.float64]:
    """ln p_r at every sigma point, summing over all components. Shape ``(K, 2m+1)``."""
    points = g.means[:, None, :] + offsets[None, :, :]
    log_w = np.log(g.weights)
    out = np.empty(points.shape[:2])
    # Blocks of sigma-point rows keep the (rows, K, m) difference tensor small.
    rows_per_block = max(1, _MC_CHUNK_ELEMENTS // max(1, g.n_components * g.dim * len(offsets)))
    for start in range(0, g.n_components, rows_per_block):
        block = points[start : start + rows_per_block]
        diff = g.differences(block[:, :, None, :], g.means[None, None, :, :])
        out[start : start + rows_per_block] = logsumexp(g.log_normal(diff) + log_w, axis=-1)
    return out


def neighbour_pairs(sources: ArrayLike, radius: float) -> NDArray[np.int64]:
    """Index pairs ``(i, j)`` with ``i < j`` of sources at most ``radius`` apart.

    Shape ``(P, 2)``. When the cloud's bounding box fits inside the
    radius every pair qualifies and no tree is built.
    """
    sources = np.asarray(sources, dtype=float)
    if len(sources) < 2:
        return np.empty((0, 2), dtype=np.int64)
    if float(np.linalg.norm(np.ptp(sources, axis=0))) <= radius:
        return np.column_stack(np.triu_indices(len(sources), 1)).astype(np.int64)
    pairs = cKDTree(sources).query_pairs(radius, output_type="ndarray")
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _sigma_log_densities_truncated(  # pylint: disable=too-many-locals
    g: PredictedGmm, offsets: NDArray[np.float64], radius: float
) -> NDArray[np.float64]:
    """As the dense version, but component ``j`` only mixes sources within ``radius``.

    Each neighbour pair is evaluated once. The kernel between sigma point
    ``l`` of ``j`` and component ``i`` equals the kernel between the
    mirrored sigma point of ``i`` and component ``j``, so one value feeds
    both rows.
    """
    k, m = g.n_components, g.dim
    pairs = neighbour_pairs(g.sources, radius)
    lo, hi = pairs[:, 0], pairs[:, 1]
    mirror = np.concatenate(([0], np.arange(m + 1, 2 * m + 1), np.arange(1, m + 1)))

    # Weights relative to the largest one; the scale is added back in log space.
    scale = float(g.weights.max())
    w = g.weights / scale
    white_offsets = g.whiten(offsets)
    offset_sq = np.einsum("ij,ij->i", white_offsets, white_offsets)
    sums = w[:, None] * np.exp(-0.5 * offset_sq)[None, :]
    if len(pairs):
        base = g.differences(g.means[hi], g.means[lo])
        white_base = g.whiten(base)
        base_sq = np.einsum("ij,ij->i", white_base, white_base)
        dims = list(g.angular_dims)
        reach = np.abs(base[:, dims]).max(axis=0) + np.abs(offsets[:, dims]).max(axis=0)
        linear = bool((reach < math.pi).all())
        for l, offset in enumerate(offsets):
            if linear:
                sq = base_sq + 2.0 * (white_base @ white_offsets[l]) + offset_sq[l]
            else:
                shifted = g.whiten(g.differences(base, -offset))
                sq = np.einsum("ij,ij->i", shifted, shifted)
            kernel = np.exp(-0.5 * sq)
            sums[:, l] += np.bincount(hi, weights=w[lo] * kernel, minlength=k)
            sums[:, mirror[l]] += np.bincount(lo, weights=w[hi] * kernel, minlength=k)
    return np.log(np.maximum(sums, _TINY)) + g.log_peak + math.log(scale)  # type: ignore[no-any-return]


def sp_entropy(g: PredictedGmm, cfg: MiConfig) -> float:
    """Sigma-point estimate of H(z) for the mixed measurement variable."""
    if g.n_components == 0:
        if g.p_empty < 1.0 - _MASS_TOL:
            raise InternalInvariantError("no components but p_empty < 1")
        return 0.0
    offsets, sp_weights = _sigma_offsets(g.cov, cfg.lam)
    radius = resolve_truncation_radius(g, cfg)
    if math.isinf(radius):
        log_p = _sigma_log_densities_dense(g, offsets)
    else:
        log_p = _sigma_log_densities_truncated(g, offsets, radius)
    h_r = -float(g.weights @ (log_p @ sp_weights))
    return _empty_entropy(g.p_empty) + h_r


def simplify_particles(b: ParticleBelief, cell: float) -> ParticleBelief:
    """Replace the particles of each ``cell``-sized grid square by their weighted mean.

    Squares whose particles all have zero weight are dropped.
    """
    clusters = cluster_by_grid(b, cell).belief
    keep = clusters.weights > 0
    if keep.all():
        return clusters
    weights = clusters.weights[keep]
    return ParticleBelief(clusters.states[keep], weights / weights.sum())


def mi_from_gmm(g: PredictedGmm, cfg: MiConfig) -> float:
    """``H(z) - H(z | x)``, clamped at zero.

    Differences below ``-cfg.negative_floor`` exceed the approximation
    budget and are logged before clamping.
    """
    if g.n_components == 0:
        return 0.0
    value = sp_entropy(g, cfg) - conditional_entropy(g)
    if value < -cfg.negative_floor:
        logger.warning(
            "MI estimate %.4f nats below the %.3f floor (%d components, p_empty=%.3f)",
            value, -cfg.negative_floor, g.n_components, g.p_empty,
        )
    return max(value, 0.0)


def mi_reward(  # pylint: disable=too-many-arguments,too-many-positional-arguments
    B: JointBeliefState,
    a: RobotControl,
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    models: SystemModel,
    cfg: MiConfig,
) -> float:
    """Information the next camera reading carries about the target after ``a``."""
    if cfg.simplify_cell > 0:
        B = JointBeliefState(B.robot, simplify_particles(B.belief, cfg.simplify_cell))
    return mi_from_gmm(predict_gmm(B, a, sensor, grid, models, cfg), cfg)


# ── Oracle and diagnostics ─────────────────────────────────────────────


def log_gmm_density(g: PredictedGmm, z: ArrayLike) -> Union[NDArray[np.float64], float]:
    """ln p_r(z) of the unnormalised in-FOV mixture; ``z`` is ``(m,)`` or ``(n, m)``."""
    if g.n_components == 0:
        raise InternalInvariantError("the mixture has no components")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    points = z.reshape(-1, g.dim)
    diff = g.differences(points[:, None, :], g.means[None, :, :])
    out = logsumexp(g.log_normal(diff) + np.log(g.weights), axis=-1)
    return float(out[0]) if single else out  # type: ignore[no-any-return]


def _log_density_batch(g: PredictedGmm, z: NDArray[np.float64]) -> NDArray[np.float64]:
    """ln p_r at the rows of ``z`` through one matrix product in whitened space.

    Falls back to :func:`log_gmm_density` when some difference would need
    wrapping. ``-0.5 |L^-1 z|^2`` is common to every component and is
    kept outside the log-sum-exp.
    """
    if not g.needs_no_wrap(z):
        return np.asarray(log_gmm_density(g, z))
    white_z = g.whiten(z)
    white_means = g.whiten(g.means)
    bias = np.log(g.weights) + g.log_peak - 0.5 * np.einsum("ij,ij->i", white_means, white_means)
    cross = logsumexp(white_z @ white_means.T + bias, axis=-1)
    return cross - 0.5 * np.einsum("ij,ij->i", white_z, white_z)  # type: ignore[no-any-return]


def mc_entropy(g: PredictedGmm, n_samples: int, rng: np.random.Generator) -> EntropyEstimate:
    """Monte-Carlo H(z) with samples drawn from the normalised in-FOV mixture."""
    if n_samples < 1:
        raise InputDomainError("n_samples must be at least 1")
    if g.n_components == 0:
        return EntropyEstimate(0.0, 0.0)
    mass = g.detect_mass
    probs = g.weights / mass
    chunk = max(1, _MC_CHUNK_ELEMENTS // (g.n_components * g.dim))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        count = min(chunk, n_samples - done)
        picks = rng.choice(g.n_components, size=count, p=probs)
        z = g.means[picks] + rng.standard_normal((count, g.dim)) @ g._chol.T  # pylint: disable=protected-access
        for dim in g.angular_dims:
            z[:, dim] = wrap_angle(z[:, dim])
        log_p = _log_density_batch(g, z)
        total += float(np.sum(log_p))
        total_sq += float(np.sum(np.square(log_p)))
        done += count
    mean = total / n_samples
    variance = max(total_sq / n_samples - mean**2, 0.0)
    value = _empty_entropy(g.p_empty) - mass * mean
    return EntropyEstimate(value, mass * math.sqrt(variance / n_samples))


def log_gmm_hessian(g: PredictedGmm, z: ArrayLike) -> NDArray[np.float64]:
    """Hessian of ln p_r at ``z``.

    Equals ``S^-1 C S^-1 - S^-1`` where ``C`` is the covariance of the
    component means under the posterior responsibilities at ``z``, which
    is the pairwise double sum over components written in centred form.
    """
    if g.n_components == 0:
        raise InternalInvariantError("the mixture has no components")
    z = np.asarray(z, dtype=float).reshape(g.dim)
    offsets = g.differences(g.means, z[None, :])
    log_chi = g.log_normal(-offsets) + np.log(g.weights)
    resp = np.exp(log_chi - log_chi.max())
    resp /= resp.sum()
    centred = offsets - resp @ offsets
    spread = (centred * resp[:, None]).T @ centred
    precision = np.linalg.inv(g.cov)
    hessian = precision @ spread @ precision - precision
    return 0.5 * (hessian + hessian.T)  # type: ignore[no-any-return]


__all__: Iterable[str] = (
    "RANGE_BEARING_ANGULAR",
    "PredictedGmm",
    "SigmaPointSet",
    "EntropyEstimate",
    "sigma_points",
    "gmm_from_particles",
    "predict_gmm",
    "conditional_entropy",
    "resolve_truncation_radius",
    "neighbour_pairs",
    "sp_entropy",
    "simplify_particles",
    "mi_from_gmm",
    "mi_reward",
    "log_gmm_density",
    "mc_entropy",
    "log_gmm_hessian",
)
