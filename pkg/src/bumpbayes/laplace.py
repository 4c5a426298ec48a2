"""Gaussian (Laplace) approximation to the conditional background posterior.

Replaces the SMC sampler inside calibration loops: for a fixed mass
hypothesis the log-background conditional is approximated by matching
mode and curvature, giving the marginal mass posterior up to a constant
from the joint density at the mode divided by the Gaussian density at the
mode.  Hyperparameters stay fixed at their posterior-mode estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln

from . import model
from .errors import NumericalError

__all__ = [
    "ExpansionTerms",
    "LaplaceConfig",
    "LaplaceResult",
    "MassPosterior",
    "default_mass_grid",
    "expansion_terms",
    "gaussian_approx",
    "log_marginal_mass",
    "mass_posterior_scan",
]

PSI_CLAMP = model.PSI_CLAMP


class ExpansionTerms(NamedTuple):
    """Componentwise quadratic surrogate a + b*psi - c*psi^2 of the bin log pmf."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    clamped: bool


def _g_terms(psi, counts, s):
    """g, g', g'' of g(psi) = -e^psi - s + y log(e^psi + s) - log y!."""
    clamped = bool(np.any(np.abs(psi) > PSI_CLAMP))
    psi_c = np.clip(psi, -PSI_CLAMP, PSI_CLAMP)
    e = np.exp(psi_c)
    lam = e + s
    with np.errstate(divide="ignore", invalid="ignore"):
        log_lam = np.log(lam)
        ratio = np.where(lam > 0, e / lam, 0.0)
    y_log = np.where(counts > 0, counts * log_lam, 0.0)
    g = -e - s + y_log - gammaln(counts + 1.0)
    g1 = -e + counts * ratio
    g2 = -e + counts * e * s / np.where(lam > 0, lam * lam, 1.0)
    return g, g1, g2, clamped


def expansion_terms(psi, counts, s) -> ExpansionTerms:
    """Quadratic expansion coefficients of each bin's log likelihood.

    With g_i the per-bin log pmf as a function of psi_i,
    ``a = g - g'psi + (g''/2)psi^2``, ``b = g' - psi g''``, ``c = -g''/2``,
    so that a + b x - c x^2 agrees with g to second order at psi.
    Inputs with |psi| > 700 are clamped before exponentiation and flagged.
    """
    psi = np.asarray(psi, dtype=float)
    counts = np.asarray(counts, dtype=float)
    s = np.asarray(s, dtype=float)
    if psi.shape != counts.shape or psi.shape != s.shape:
        raise ValueError("psi, counts and s must have identical shapes")
    g, g1, g2, clamped = _g_terms(psi, counts, s)
    psi_c = np.clip(psi, -PSI_CLAMP, PSI_CLAMP)
    a = g - g1 * psi_c + 0.5 * g2 * psi_c**2
    b = g1 - psi_c * g2
    c = -0.5 * g2
    return ExpansionTerms(a=a, b=b, c=c, clamped=clamped)


@dataclass
class LaplaceResult:
    """Mode, curvature and Laplace log evidence of the background conditional."""

    mode_psi: np.ndarray
    precision: np.ndarray
    log_marginal_unnorm: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class LaplaceConfig:
    """Fixed hyperparameters and Newton controls for the approximation."""

    eta: float
    sigma2: float
    tol: float = 1e-8
    max_iter: int = 100


def _objective_batch(psis, counts, s_batch, chol, mean_vec):
    """Log joint (up to constants): -quad/2 + sum_i g_i, row-wise."""
    resid = psis - mean_vec
    quad = np.einsum("gi,gi->g", resid, cho_solve(chol, resid.T).T)
    g, _, _, _ = _g_terms(psis, counts, s_batch)
    return -0.5 * quad + np.sum(g, axis=1), quad


def _newton_batch(counts, s_batch, mean_vec, cov, psi0, tol, max_iter):
    """Damped Newton iteration for a batch of signal vectors sharing cov.

    Returns (modes, quad, logdet_IplusSD, loglik, iterations, converged).
    """
    counts = np.asarray(counts, dtype=float)
    s_batch = np.atleast_2d(np.asarray(s_batch, dtype=float))
    n_batch, n = s_batch.shape
    chol = cho_factor(cov, lower=True)
    psis = np.tile(np.asarray(psi0, dtype=float), (n_batch, 1))
    obj, _ = _objective_batch(psis, counts, s_batch, chol, mean_vec)

    iterations = np.zeros(n_batch, dtype=int)
    converged = np.zeros(n_batch, dtype=bool)
    eye = np.eye(n)
    for it in range(max_iter):
        active = ~converged
        if not np.any(active):
            break
        psi_a = psis[active]
        s_a = s_batch[active]
        _, g1, g2, _ = _g_terms(psi_a, counts, s_a)
        d = -g2
        rhs = mean_vec + (cov @ (g1 + d * psi_a).T).T
        mat = eye[None, :, :] + cov[None, :, :] * d[:, None, :]
        try:
            psi_new = np.linalg.solve(mat, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular Newton system in Laplace iteration: {exc}") from exc

        # step-halving damping when the log joint decreases
        obj_a = obj[active]
        step = psi_new - psi_a
        scale = np.ones(psi_a.shape[0])
        psi_try = psi_a + step
        obj_try, _ = _objective_batch(psi_try, counts, s_a, chol, mean_vec)
        for _ in range(10):
            worse = obj_try < obj_a - 1e-12
            if not np.any(worse):
                break
            scale[worse] *= 0.5
            psi_try[worse] = psi_a[worse] + scale[worse, None] * step[worse]
            obj_new, _ = _objective_batch(psi_try[worse], counts, s_a[worse], chol, mean_vec)
            obj_try[worse] = obj_new

        delta = np.max(np.abs(psi_try - psi_a), axis=1)
        psis[active] = psi_try
        obj[active] = obj_try
        iterations[active] = it + 1
        newly = np.zeros(n_batch, dtype=bool)
        newly[active] = delta < tol
        converged |= newly

    _, g1, g2, _ = _g_terms(psis, counts, s_batch)
    d = -g2
    mat = eye[None, :, :] + cov[None, :, :] * d[:, None, :]
    sign, logdet_m = np.linalg.slogdet(mat)
    if np.any(sign <= 0):
        raise NumericalError("non-positive determinant at the Laplace mode")
    _, quad = _objective_batch(psis, counts, s_batch, chol, mean_vec)
    loglik = model.log_likelihood_batch(counts.astype(np.int64), psis, s_batch, 1.0)
    return psis, quad, logdet_m, loglik, iterations, converged


def gaussian_approx(
    counts,
    s,
    prior_mean_vec,
    prior_cov,
    psi0=None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> LaplaceResult:
    """Gaussian approximation to the background conditional posterior.

    Iterates the Newton scheme (prior precision plus the negated
    likelihood curvature) with step halving until the sup-norm change
    drops below ``tol``.  The returned precision is the curvature
    ``cov^-1 + diag(-g'')`` at the mode and ``log_marginal_unnorm`` is the
    Laplace estimate of log p(y | hypothesis) under the GP prior.
    """
    counts = np.asarray(counts)
    mean_vec = np.asarray(prior_mean_vec, dtype=float)
    cov = np.asarray(prior_cov, dtype=float)
    start = mean_vec if psi0 is None else np.asarray(psi0, dtype=float)
    modes, quad, logdet_m, loglik, iters, conv = _newton_batch(
        counts, np.asarray(s, dtype=float)[None, :], mean_vec, cov, start, tol, max_iter
    )
    mode = modes[0]
    _, _, g2, _ = _g_terms(mode, np.asarray(counts, dtype=float), np.asarray(s, dtype=float))
    chol = cho_factor(cov, lower=True)
    precision = cho_solve(chol, np.eye(mode.size)) + np.diag(-g2)
    precision = 0.5 * (precision + precision.T)
    log_marg = float(loglik[0] - 0.5 * quad[0] - 0.5 * logdet_m[0])
    return LaplaceResult(
        mode_psi=mode,
        precision=precision,
        log_marginal_unnorm=log_marg,
        iterations=int(iters[0]),
        converged=bool(conv[0]),
    )


def _scan_cov(spectrum: model.BinnedSpectrum, gp_prior: model.GpBackgroundPrior, config: LaplaceConfig):
    mid = spectrum.midpoints
    z = model.rescale_to_unit(mid, spectrum.edges[0], spectrum.edges[-1])
    return model.covariance_matrix(
        z, config.eta, config.sigma2, jitter=gp_prior.jitter_rel * config.sigma2
    )


def log_marginal_mass(
    hyp: model.MassHypothesis,
    data: model.BinnedSpectrum,
    template: model.SignalTemplate,
    gp_prior: model.GpBackgroundPrior,
    mass_prior: model.MassPrior,
    config: LaplaceConfig,
    strict: bool = True,
) -> float:
    """Unnormalized log posterior of one mass hypothesis via Laplace.

    log prior(hyp) plus the Laplace log evidence with eta and sigma2 held
    at the supplied posterior-mode values.  Raises on non-convergence when
    ``strict``.
    """
    lo, hi = data.window
    hyp.require_inside(lo, hi)
    s = model.signal_bin_integrals(hyp, template, data.edges)
    cov = _scan_cov(data, gp_prior, config)
    mean_vec = model.prior_mean_vector(gp_prior, data.edges)
    res = gaussian_approx(
        data.counts, s, mean_vec, cov, tol=config.tol, max_iter=config.max_iter
    )
    if strict and not res.converged:
        raise NumericalError(f"Laplace iteration did not converge for {hyp!r}")
    return mass_prior.log_density(hyp) + res.log_marginal_unnorm


@dataclass
class MassPosterior:
    """Normalized posterior over the mass hypothesis: atom + grid density."""

    p_absent: float
    grid: np.ndarray
    density: np.ndarray

    def density_at(self, mass: float) -> float:
        return float(np.interp(mass, self.grid, self.density))

    def total_mass(self) -> float:
        return self.p_absent + float(np.trapezoid(self.density, self.grid))


def default_mass_grid(window: tuple[float, float], spacing: float = 0.25) -> np.ndarray:
    """Interior scan grid at the given spacing (endpoints excluded)."""
    lo, hi = window
    return np.arange(lo + spacing, hi - spacing / 2, spacing)


def mass_posterior_scan(
    data: model.BinnedSpectrum,
    template: model.SignalTemplate,
    gp_prior: model.GpBackgroundPrior,
    mass_prior: model.MassPrior,
    grid: np.ndarray | None = None,
    config: LaplaceConfig | None = None,
    strict: bool = True,
) -> MassPosterior:
    """Laplace scan over the mass grid, normalized with the absent atom.

    Total probability (atom plus trapezoid integral of the continuous
    density) is exactly one by construction.  The absent hypothesis is
    solved first from the prior mean; the grid points then warm-start at
    its mode (same fixed point, fewer Newton steps).
    """
    if config is None:
        raise ValueError("a LaplaceConfig with fixed (eta, sigma2) is required")
    if grid is None:
        grid = default_mass_grid(data.window)
    grid = np.asarray(grid, dtype=float)
    lo, hi = data.window
    if grid.size < 2 or np.any(grid <= lo) or np.any(grid >= hi):
        raise ValueError("grid must have >= 2 points strictly inside the window")

    cov = _scan_cov(data, gp_prior, config)
    mean_vec = model.prior_mean_vector(gp_prior, data.edges)
    s_batch = np.vstack(
        [
            np.zeros(data.n_bins),
            model.signal_bin_integrals_batch(grid, template, data.edges),
        ]
    )
    chunk = max(1, int(2**23 // max(1, data.n_bins * data.n_bins)))
    logs = np.empty(s_batch.shape[0])
    converged = np.empty(s_batch.shape[0], dtype=bool)
    modes0, quad0, logdet0, loglik0, _, conv0 = _newton_batch(
        data.counts, s_batch[:1], mean_vec, cov, mean_vec, config.tol, config.max_iter
    )
    logs[0] = loglik0[0] - 0.5 * quad0[0] - 0.5 * logdet0[0]
    converged[0] = conv0[0]
    start_psi = modes0[0]
    for start in range(1, s_batch.shape[0], chunk):
        stop = min(start + chunk, s_batch.shape[0])
        _, quad, logdet_m, loglik, _, conv = _newton_batch(
            data.counts, s_batch[start:stop], mean_vec, cov, start_psi, config.tol, config.max_iter
        )
        logs[start:stop] = loglik - 0.5 * quad - 0.5 * logdet_m
        converged[start:stop] = conv
    if strict and not np.all(converged):
        raise NumericalError(
            f"Laplace scan failed to converge at {int(np.sum(~converged))} grid points"
        )

    log_unnorm = np.empty_like(logs)
    log_unnorm[0] = math.log(mass_prior.p_absent) + logs[0]
    log_unnorm[1:] = (
        math.log1p(-mass_prior.p_absent) - math.log(hi - lo) + logs[1:]
    )
    peak = np.max(log_unnorm)
    if not np.isfinite(peak):
        raise NumericalError("all scan values are -inf; posterior undefined")
    atom_unnorm = math.exp(log_unnorm[0] - peak)
    dens_unnorm = np.exp(log_unnorm[1:] - peak)
    # extend to the window endpoints (clamped density) so the trapezoid
    # covers all of (lo, hi); otherwise the edge slices bias p_absent
    full_grid = np.concatenate([[lo], grid, [hi]])
    full_dens = np.concatenate([[dens_unnorm[0]], dens_unnorm, [dens_unnorm[-1]]])
    total = atom_unnorm + float(np.trapezoid(full_dens, full_grid))
    return MassPosterior(
        p_absent=atom_unnorm / total,
        grid=full_grid,
        density=full_dens / total,
    )
