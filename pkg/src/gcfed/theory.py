"""Numerical verification of the one-step projection analysis.

The verification family is the quadratic F_k(w) = 1/2 * ||w - c_k||^2 over
matrix-shaped parameters, which makes the optimum, the smoothness constant
and every term of the one-step gap decomposition exactly computable. One
synchronized step is executed per check: every client evaluates its
gradient at the shared iterate (optionally perturbed by zero-mean noise),
the update is either applied raw or projected onto the zero-mean
hyperplane, and the squared distance to the optimum is compared.

Hyperplane geometry matches the model code: parameters are stored
``[F_out, F_in]`` and the projection removes the per-row mean (the
reduction runs over the input axis), so the normalized all-ones direction
lives in R^{F_in}.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .gc_core import DEFAULT_SPEC, centralize_mean_sub
from .seeding import substream


def mean_component_sqnorm(tensor: np.ndarray) -> float:
    """Squared norm of the component along the all-ones direction.

    For a matrix ``[F_out, F_in]`` this equals ``F_in * sum_j mu_j^2`` where
    ``mu_j`` is row ``j``'s mean, i.e. the squared Frobenius norm of the part
    removed by centralization.
    """
    m = tensor.shape[1]
    mu = tensor.mean(axis=1)
    return float(m * (mu ** 2).sum())


@dataclass(frozen=True)
class QuadraticProblem:
    """Weighted family of quadratic client objectives with a known optimum."""

    centers: np.ndarray   # [num_clients, F_out, F_in]
    weights: np.ndarray   # p_k, positive, sums to 1
    smoothness: float = 1.0

    def __post_init__(self):
        if self.centers.ndim != 3:
            raise ConfigError("client centers must have shape [clients, F_out, F_in]")
        if self.weights.shape != (self.centers.shape[0],):
            raise ConfigError("one weight per client required")
        if np.any(self.weights <= 0) or not math.isclose(float(self.weights.sum()), 1.0,
                                                         rel_tol=0, abs_tol=1e-9):
            raise ConfigError("client weights must be positive and sum to 1")

    @property
    def optimum(self) -> np.ndarray:
        return np.einsum("k,kij->ij", self.weights, self.centers)

    def client_gradients(self, w: np.ndarray) -> np.ndarray:
        """grad F_k(w) = w - c_k for every client, stacked."""
        return w[None, :, :] - self.centers

    def objective(self, w: np.ndarray) -> float:
        diffs = w[None, :, :] - self.centers
        return float(0.5 * np.einsum("k,kij->", self.weights, diffs ** 2))

    @classmethod
    def random(cls, num_clients: int, shape: tuple, seed: int,
               centered_optimum: bool = True, uniform_weights: bool = False) -> "QuadraticProblem":
        """Seeded problem; optionally shift centers so the optimum has zero row means."""
        rng = substream(seed, "quadratic-problem")
        centers = rng.normal(size=(num_clients, *shape))
        if uniform_weights:
            weights = np.full(num_clients, 1.0 / num_clients)
        else:
            raw = rng.uniform(0.5, 1.5, size=num_clients)
            weights = raw / raw.sum()
        if centered_optimum:
            w_star = np.einsum("k,kij->ij", weights, centers)
            centers = centers - (w_star - centralize_mean_sub(w_star, DEFAULT_SPEC))[None, :, :]
        return cls(centers, weights)


def one_step_gap(problem: QuadraticProblem, w0: np.ndarray, eta: float,
                 strategy: str = "plain", noise: np.ndarray = None) -> float:
    """Squared distance to the optimum after one synchronized step.

    Every client computes its gradient at ``w0`` (plus optional per-client
    noise), projects it when ``strategy == "projected"``, the server forms
    the weighted average, and the iterate moves by ``-eta`` times it.
    """
    if strategy not in ("plain", "projected"):
        raise ConfigError(f"strategy must be 'plain' or 'projected', got {strategy!r}")
    if eta < 0:
        raise ConfigError(f"step size must be >= 0, got {eta}")
    grads = problem.client_gradients(w0)
    if noise is not None:
        grads = grads + noise
    if strategy == "projected":
        grads = np.stack([centralize_mean_sub(g, DEFAULT_SPEC) for g in grads])
    avg = np.einsum("k,kij->ij", problem.weights, grads)
    w1 = w0 - eta * avg
    return float(((w1 - problem.optimum) ** 2).sum())


def gap_reduction_terms(g_stoch: np.ndarray, g_mean: np.ndarray, eta: float):
    """The two nonnegative amounts by which projection shrinks the one-step gap.

    Returns ``(eta^2 * ||mean component of g_mean||^2,
    eta^2 * ||mean component of (g_stoch - g_mean)||^2)``.
    """
    if g_stoch.shape != g_mean.shape:
        raise ConfigError("stochastic and mean gradients must share a shape")
    b2 = eta ** 2 * mean_component_sqnorm(g_mean)
    a2 = eta ** 2 * mean_component_sqnorm(g_stoch - g_mean)
    return b2, a2


@dataclass
class GapReport:
    """Monte-Carlo comparison of measured vs predicted gap reduction."""

    gap_before: float
    gap_after_plain: float       # trial-averaged
    gap_after_projected: float   # trial-averaged
    measured_reduction: float
    predicted_reduction: float
    b2_term: float
    a2_term_mean: float
    relative_error: float
    a3_mean: float
    a3_stderr: float
    trials: int


def expected_gap_identity_check(problem: QuadraticProblem, w0: np.ndarray, eta: float,
                                trials: int, noise_sigma: float = 0.0,
                                seed: int = 0) -> GapReport:
    """Check that the measured gap reduction matches the predicted terms.

    Per trial, clients receive i.i.d. zero-mean Gaussian perturbations; the
    plain and projected one-step gaps are measured through the update path
    and compared with the closed-form prediction (deterministic term from
    the exact mean gradient plus the trial-averaged stochastic term). The
    cross term of the decomposition is also accumulated; unbiased noise
    makes its expectation zero.
    """
    if trials < 1:
        raise ConfigError("at least one trial required")
    g_mean = np.einsum("k,kij->ij", problem.weights, problem.client_gradients(w0))
    g_mean_proj = centralize_mean_sub(g_mean, DEFAULT_SPEC)
    anchor = w0 - problem.optimum - eta * g_mean_proj
    gap_before = float(((w0 - problem.optimum) ** 2).sum())
    b2 = eta ** 2 * mean_component_sqnorm(g_mean)

    rng = substream(seed, "identity-noise")
    diffs = np.empty(trials)
    plain_gaps = np.empty(trials)
    proj_gaps = np.empty(trials)
    a2_terms = np.empty(trials)
    a3_terms = np.empty(trials)
    for t in range(trials):
        noise = (rng.normal(size=problem.centers.shape) * noise_sigma
                 if noise_sigma > 0 else None)
        plain = one_step_gap(problem, w0, eta, "plain", noise)
        projected = one_step_gap(problem, w0, eta, "projected", noise)
        plain_gaps[t] = plain
        proj_gaps[t] = projected
        diffs[t] = plain - projected
        if noise is None:
            g_draw = g_mean
        else:
            g_draw = np.einsum("k,kij->ij", problem.weights,
                               problem.client_gradients(w0) + noise)
        a2_terms[t] = eta ** 2 * mean_component_sqnorm(g_draw - g_mean)
        g_draw_proj = centralize_mean_sub(g_draw, DEFAULT_SPEC)
        a3_terms[t] = 2.0 * eta * float((anchor * (g_draw_proj - g_mean_proj)).sum())

    measured = float(diffs.mean())
    predicted = float(b2 + a2_terms.mean())
    scale = max(abs(predicted), abs(measured), 1e-30)
    a3_mean = float(a3_terms.mean())
    a3_stderr = float(a3_terms.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return GapReport(
        gap_before=gap_before,
        gap_after_plain=float(plain_gaps.mean()),
        gap_after_projected=float(proj_gaps.mean()),
        measured_reduction=measured,
        predicted_reduction=predicted,
        b2_term=float(b2),
        a2_term_mean=float(a2_terms.mean()),
        relative_error=float(abs(measured - predicted) / scale),
        a3_mean=a3_mean,
        a3_stderr=a3_stderr,
        trials=trials,
    )


def residual_bound_check(w_star: np.ndarray, smoothness: float = 1.0):
    """Objective penalty for converging on the hyperplane vs the smoothness bound.

    For the quadratic family the left side is 1/2 * ||w_par - w*||^2 with
    ``w_par`` the centralized optimum; the right side is L/2 times the
    squared norm of the removed mean component, evaluated through an
    explicitly formed projector for independence. The bound holds with
    equality when L = 1.
    """
    w_par = centralize_mean_sub(w_star, DEFAULT_SPEC)
    lhs = float(0.5 * ((w_par - w_star) ** 2).sum())
    m = w_star.shape[1]
    onto_mean = np.full((m, m), 1.0 / m)
    removed = w_star @ onto_mean
    rhs = float(0.5 * smoothness * (removed ** 2).sum())
    return lhs, rhs, bool(lhs <= rhs + 1e-12)


def hyperplane_drift(problem: QuadraticProblem, w0: np.ndarray, eta: float,
                     steps: int, noise_sigma: float = 0.0, seed: int = 0) -> float:
    """Largest absolute row mean along a projected trajectory started on-plane."""
    rng = substream(seed, "trajectory-noise")
    w = centralize_mean_sub(w0, DEFAULT_SPEC)
    worst = float(np.abs(w.mean(axis=1)).max())
    for _ in range(steps):
        noise = (rng.normal(size=problem.centers.shape) * noise_sigma
                 if noise_sigma > 0 else None)
        grads = problem.client_gradients(w)
        if noise is not None:
            grads = grads + noise
        grads = np.stack([centralize_mean_sub(g, DEFAULT_SPEC) for g in grads])
        w = w - eta * np.einsum("k,kij->ij", problem.weights, grads)
        worst = max(worst, float(np.abs(w.mean(axis=1)).max()))
    return worst
