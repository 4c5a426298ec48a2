"""Domain types, priors, signal template and Poisson bin likelihood.

The observed histogram is modeled as independent Poisson counts whose bin
means are the sum of an integrated smooth background and, when a particle
is present, an integrated Gaussian-shaped signal of known (interpolated)
scale and width.  The log of the per-bin integrated background carries a
Gaussian-process prior with squared-exponential covariance evaluated on
bin midpoints after an affine rescale of mass to the unit interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln, ndtr

__all__ = [
    "Absent",
    "BinnedSpectrum",
    "GpBackgroundPrior",
    "LogNormalPrior",
    "MassHypothesis",
    "MassPrior",
    "Particle",
    "SignalTemplate",
    "bernstein_mean",
    "covariance_matrix",
    "log_likelihood",
    "log_prior",
    "prior_mean_vector",
    "rescale_to_unit",
    "signal_bin_integrals",
]

# Binomial coefficients C(4, i) of the fourth-order Bernstein basis.
_BERN_BINOM = np.array([1.0, 4.0, 6.0, 4.0, 1.0])

# exp() saturates double precision near 709; clamp log-intensities there.
PSI_CLAMP = 700.0


def _as_float_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Mass hypothesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MassHypothesis:
    """Either the no-particle case or a particle at a definite mass.

    ``MassHypothesis.absent()`` is the no-particle hypothesis;
    ``MassHypothesis.at(m)`` places the particle at mass ``m`` (GeV).
    """

    mass: float | None

    @classmethod
    def absent(cls) -> "MassHypothesis":
        return cls(mass=None)

    @classmethod
    def at(cls, mass: float) -> "MassHypothesis":
        mass = float(mass)
        if not math.isfinite(mass):
            raise ValueError("mass must be finite")
        return cls(mass=mass)

    @property
    def is_absent(self) -> bool:
        return self.mass is None

    def require_inside(self, lo: float, hi: float) -> None:
        """Validate the open-window constraint for a present hypothesis."""
        if self.mass is not None and not (lo < self.mass < hi):
            raise ValueError(f"mass {self.mass} outside open window ({lo}, {hi})")

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return "Absent" if self.mass is None else f"Present({self.mass})"


#: Shared no-particle hypothesis.
Absent = MassHypothesis.absent()


# ---------------------------------------------------------------------------
# Data and prior containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinnedSpectrum:
    """Bin edges (GeV, length n+1) and observed event counts (length n)."""

    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = _as_float_vector(self.edges, "edges")
        counts = np.asarray(self.counts)
        if edges.size < 2:
            raise ValueError("need at least two bin edges")
        if not np.all(np.isfinite(edges)):
            raise ValueError("edges must be finite")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if counts.ndim != 1 or counts.size != edges.size - 1:
            raise ValueError("counts length must equal edges length - 1")
        if np.any(counts < 0) or not np.allclose(counts, np.round(counts)):
            raise ValueError("counts must be non-negative integers")
        counts = counts.astype(np.int64)
        edges.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def window(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


@dataclass(frozen=True)
class SignalTemplate:
    """Per-mass signal shape: scale c and width eps at anchor masses.

    Between anchors both parameters interpolate piecewise-linearly in
    mass; outside the anchor range they clamp to the nearest anchor.
    """

    anchor_masses: np.ndarray
    anchor_scales: np.ndarray
    anchor_widths: np.ndarray

    def __post_init__(self):
        masses = _as_float_vector(self.anchor_masses, "anchor_masses")
        scales = _as_float_vector(self.anchor_scales, "anchor_scales")
        widths = _as_float_vector(self.anchor_widths, "anchor_widths")
        if masses.size < 1 or masses.size != scales.size or masses.size != widths.size:
            raise ValueError("anchor arrays must be equal-length and non-empty")
        if np.any(np.diff(masses) <= 0):
            raise ValueError("anchor masses must be strictly increasing")
        if np.any(scales <= 0) or np.any(widths <= 0):
            raise ValueError("anchor scales and widths must be strictly positive")
        if not (np.all(np.isfinite(masses)) and np.all(np.isfinite(scales)) and np.all(np.isfinite(widths))):
            raise ValueError("anchor values must be finite")
        for arr in (masses, scales, widths):
            arr.setflags(write=False)
        object.__setattr__(self, "anchor_masses", masses)
        object.__setattr__(self, "anchor_scales", scales)
        object.__setattr__(self, "anchor_widths", widths)

    def at(self, mass) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated (scale, width) at one or many masses."""
        m = np.asarray(mass, dtype=float)
        c = np.interp(m, self.anchor_masses, self.anchor_scales)
        eps = np.interp(m, self.anchor_masses, self.anchor_widths)
        return c, eps


@dataclass(frozen=True)
class GpBackgroundPrior:
    """Gaussian-process prior for the log integrated background.

    ``mean_coeffs`` are the five coefficients of the fourth-order
    Bernstein polynomial mean of the log intensity on the unit interval;
    ``eta`` and ``sigma2`` are the squared-exponential correlation and
    variance parameters (both carry inverse-gamma hyperpriors with the
    given shape and scale when inferred).
    """

    mean_coeffs: np.ndarray
    eta: float
    sigma2: float
    hyperprior_shape: float = 1.0
    hyperprior_scale: float = 1.0
    jitter_rel: float = 1e-8

    def __post_init__(self):
        coeffs = _as_float_vector(self.mean_coeffs, "mean_coeffs")
        if coeffs.size != 5:
            raise ValueError("mean_coeffs must have exactly 5 entries")
        if not (self.eta > 0 and self.sigma2 > 0):
            raise ValueError("eta and sigma2 must be strictly positive")
        if not (self.hyperprior_shape > 0 and self.hyperprior_scale > 0):
            raise ValueError("hyperprior parameters must be strictly positive")
        if self.jitter_rel < 0:
            raise ValueError("jitter_rel must be non-negative")
        coeffs.setflags(write=False)
        object.__setattr__(self, "mean_coeffs", coeffs)


@dataclass(frozen=True)
class MassPrior:
    """Mixture prior over the mass hypothesis.

    Point mass ``p_absent`` on the no-particle case and a uniform density
    on the open search window for the present case.
    """

    p_absent: float
    window: tuple[float, float]

    def __post_init__(self):
        if not (0.0 < self.p_absent < 1.0):
            raise ValueError("p_absent must lie strictly inside (0, 1)")
        lo, hi = self.window
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError("window must be a finite increasing pair")
        object.__setattr__(self, "window", (float(lo), float(hi)))

    @property
    def width(self) -> float:
        return self.window[1] - self.window[0]

    def log_density(self, hyp: MassHypothesis) -> float:
        """Log prior mass (atom) or log prior density (continuous part)."""
        if hyp.is_absent:
            return math.log(self.p_absent)
        lo, hi = self.window
        if not (lo < hyp.mass < hi):
            return -math.inf
        return math.log1p(-self.p_absent) - math.log(self.width)


@dataclass(frozen=True)
class LogNormalPrior:
    """Log-normal prior, used for the cross-section scale in free-mu mode."""

    mu_log: float = 0.0
    sigma_log: float = 0.05

    def __post_init__(self):
        if self.sigma_log <= 0:
            raise ValueError("sigma_log must be positive")

    def log_density(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        z = (math.log(x) - self.mu_log) / self.sigma_log
        return -0.5 * z * z - math.log(x * self.sigma_log * math.sqrt(2 * math.pi))


@dataclass(frozen=True)
class Particle:
    """One posterior draw of (eta, sigma2, psi, mass[, mu]) with a log weight."""

    eta: float
    sigma2: float
    psi: np.ndarray
    mass: MassHypothesis
    mu: float = 1.0
    log_weight: float = 0.0

    def __post_init__(self):
        psi = _as_float_vector(self.psi, "psi")
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi must be finite")
        if self.mu <= 0:
            raise ValueError("mu must be strictly positive")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def bernstein_mean(z, coeffs) -> np.ndarray | float:
    """Fourth-order Bernstein polynomial sum_i coeffs[i] C(4,i) z^i (1-z)^(4-i).

    ``z`` must lie in [0, 1] (scalar or vector); returns matching shape.
    """
    z_arr = np.asarray(z, dtype=float)
    coeffs = _as_float_vector(coeffs, "coeffs")
    if coeffs.size != 5:
        raise ValueError("coeffs must have exactly 5 entries")
    if np.any(z_arr < 0) or np.any(z_arr > 1) or not np.all(np.isfinite(z_arr)):
        raise ValueError("z must lie in [0, 1]")
    zc = z_arr[..., None]
    i = np.arange(5.0)
    basis = _BERN_BINOM * zc**i * (1.0 - zc) ** (4.0 - i)
    out = basis @ coeffs
    return float(out) if np.isscalar(z) or np.ndim(z) == 0 else out


def rescale_to_unit(x, lo: float, hi: float) -> np.ndarray:
    """Affine map of masses from [lo, hi] onto the unit interval."""
    if not (hi > lo):
        raise ValueError("need hi > lo")
    return (np.asarray(x, dtype=float) - lo) / (hi - lo)


def covariance_matrix(grid, eta: float, sigma2: float, jitter: float = 0.0) -> np.ndarray:
    """Squared-exponential covariance sigma2*exp(-eta*d^2) + jitter on the diagonal.

    ``grid`` is expected on the unit interval (affinely rescaled mass), so
    ``eta`` is dimensionless.
    """
    g = _as_float_vector(grid, "grid")
    if not np.all(np.isfinite(g)):
        raise ValueError("grid must be finite")
    if not (eta > 0 and sigma2 > 0 and math.isfinite(eta) and math.isfinite(sigma2)):
        raise ValueError("eta and sigma2 must be positive and finite")
    if jitter < 0 or not math.isfinite(jitter):
        raise ValueError("jitter must be non-negative and finite")
    d = g[:, None] - g[None, :]
    cov = sigma2 * np.exp(-eta * d * d)
    if jitter:
        cov[np.diag_indices_from(cov)] += jitter
    return cov


def prior_mean_vector(prior: GpBackgroundPrior, edges) -> np.ndarray:
    """GP prior mean of the log per-bin integrated background.

    Convention: the GP lives on bin midpoints (rescaled to the unit
    interval) and the mean is log(exp(xi(midpoint)) * bin_width), i.e. the
    midpoint-rule integral of the mean intensity over each bin.
    """
    edges = _as_float_vector(edges, "edges")
    mid = 0.5 * (edges[:-1] + edges[1:])
    z = rescale_to_unit(mid, edges[0], edges[-1])
    return bernstein_mean(z, prior.mean_coeffs) + np.log(np.diff(edges))


def signal_bin_integrals(hyp: MassHypothesis, template: SignalTemplate, edges) -> np.ndarray:
    """Expected signal counts per bin for the given mass hypothesis.

    For a present mass m, bin i receives
    ``c_m * (Phi((m_i - m)/eps) - Phi((m_{i-1} - m)/eps))`` with (c_m, eps)
    interpolated at m; the absent hypothesis contributes zeros.
    """
    edges = _as_float_vector(edges, "edges")
    if hyp.is_absent:
        return np.zeros(edges.size - 1)
    c, eps = template.at(hyp.mass)
    cdf = ndtr((edges - hyp.mass) / eps)
    return float(c) * np.diff(cdf)


def signal_bin_integrals_batch(masses: np.ndarray, template: SignalTemplate, edges) -> np.ndarray:
    """Vectorized ``signal_bin_integrals`` over many present masses.

    Returns an (n_masses, n_bins) array; NaN masses (absent) give zero rows.
    """
    edges = _as_float_vector(edges, "edges")
    m = np.asarray(masses, dtype=float)
    absent = ~np.isfinite(m)
    m_safe = np.where(absent, edges[0], m)
    c, eps = template.at(m_safe)
    cdf = ndtr((edges[None, :] - m_safe[:, None]) / eps[:, None])
    s = c[:, None] * np.diff(cdf, axis=1)
    s[absent] = 0.0
    return s


def log_likelihood(counts, psi, s, mu: float = 1.0) -> float:
    """Poisson log likelihood sum_i [-Gamma_i + y_i log Gamma_i - log y_i!].

    ``Gamma_i = exp(psi_i) + mu * s_i``.  Returns -inf when some bin has
    zero (or overflowed) mean but a positive count.
    """
    y = np.asarray(counts)
    psi = np.asarray(psi, dtype=float)
    s = np.asarray(s, dtype=float)
    if y.shape != psi.shape or y.shape != s.shape:
        raise ValueError("counts, psi and s must have identical shapes")
    if mu < 0:
        raise ValueError("mu must be non-negative")
    with np.errstate(over="ignore"):
        gamma = np.exp(psi) + mu * s
    if np.any(~np.isfinite(gamma)):
        return -math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        log_gamma = np.log(gamma)
        terms = -gamma + np.where(y > 0, y * log_gamma, 0.0) - gammaln(y + 1.0)
    if np.any(np.isnan(terms)):
        return -math.inf
    return float(np.sum(terms))


def log_likelihood_batch(counts, psis: np.ndarray, s: np.ndarray, mu) -> np.ndarray:
    """Row-wise Poisson log likelihood for (N, n) psi and signal arrays."""
    y = np.asarray(counts, dtype=float)
    mu_col = np.asarray(mu, dtype=float).reshape(-1, 1) if np.ndim(mu) else float(mu)
    with np.errstate(over="ignore"):
        gamma = np.exp(psis) + mu_col * s
    with np.errstate(divide="ignore", invalid="ignore"):
        log_gamma = np.log(gamma)
        terms = -gamma + np.where(y > 0, y * log_gamma, 0.0)
    out = np.sum(terms, axis=1) - float(np.sum(gammaln(y + 1.0)))
    bad = ~np.isfinite(gamma).all(axis=1) | np.isnan(terms).any(axis=1)
    out[bad] = -math.inf
    return out


def inverse_gamma_log_density(x: float, shape: float, scale: float) -> float:
    """Log density of the inverse-gamma distribution at x."""
    if x <= 0:
        return -math.inf
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - scale / x


def log_prior(
    particle: Particle,
    prior: GpBackgroundPrior,
    mass_prior: MassPrior,
    edges,
    mu_prior: LogNormalPrior | None = None,
) -> float:
    """Log prior density of one particle under the full hierarchical prior.

    Sums the inverse-gamma hyperprior terms for eta and sigma2, the
    multivariate normal density of psi under the GP prior, the mass-mixture
    term, and (in free-mu mode only) the log-normal term for mu.
    """
    if particle.eta <= 0 or particle.sigma2 <= 0:
        return -math.inf
    lp = inverse_gamma_log_density(particle.eta, prior.hyperprior_shape, prior.hyperprior_scale)
    lp += inverse_gamma_log_density(particle.sigma2, prior.hyperprior_shape, prior.hyperprior_scale)

    edges = _as_float_vector(edges, "edges")
    mid = 0.5 * (edges[:-1] + edges[1:])
    z_grid = rescale_to_unit(mid, edges[0], edges[-1])
    cov = covariance_matrix(
        z_grid, particle.eta, particle.sigma2, jitter=prior.jitter_rel * particle.sigma2
    )
    resid = particle.psi - prior_mean_vector(prior, edges)
    chol = cho_factor(cov, lower=True)
    quad = float(resid @ cho_solve(chol, resid))
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    n = resid.size
    lp += -0.5 * (n * math.log(2.0 * math.pi) + logdet + quad)

    lp += mass_prior.log_density(particle.mass)
    if mu_prior is not None:
        lp += mu_prior.log_density(particle.mu)
    return lp
