"""Pseudo-experiment generation and signal-template construction.

The default scenario mirrors the search setup used throughout the test
suite: an 80 GeV window split into 322 uniform bins, a smoothly falling
background whose log intensity is a fourth-order Bernstein polynomial,
and a Gaussian signal whose scale and width are anchored at three masses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from . import model
from .errors import NumericalError

__all__ = [
    "Scenario",
    "TemplateFit",
    "draw_background",
    "draw_counts",
    "fit_template",
    "fit_bernstein_log_intensity",
    "make_paper_like_scenario",
]

# Default scenario constants.  The Bernstein coefficients are the exact
# representation of the falling log intensity
#   log(total / norm) - (m - lo) / falloff
# on the unit interval (a linear function of z, which the basis reproduces
# with coefficients on an arithmetic progression); kept frozen here and
# checked by the round-trip test in the suite.
DEFAULT_WINDOW = (100.0, 180.0)
DEFAULT_N_BINS = 322
DEFAULT_BACKGROUND_TOTAL = 12000.0
DEFAULT_FALLOFF_GEV = 35.0
DEFAULT_ANCHOR_MASSES = (120.0, 125.0, 130.0)
DEFAULT_ANCHOR_SCALES = (510.0, 520.0, 530.0)
DEFAULT_ANCHOR_WIDTHS = (4.0, 4.2, 4.4)
DEFAULT_ETA = 8.0
DEFAULT_SIGMA2 = 0.0003


def draw_background(prior: model.GpBackgroundPrior, edges, seed: int) -> np.ndarray:
    """Draw the log per-bin integrated background from the GP prior.

    Multivariate normal via Cholesky with jitter escalation (up to three
    decades) before giving up.
    """
    edges = np.asarray(edges, dtype=float)
    mid = 0.5 * (edges[:-1] + edges[1:])
    z_grid = model.rescale_to_unit(mid, edges[0], edges[-1])
    mean = model.prior_mean_vector(prior, edges)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    draws = rng.standard_normal(mid.size)
    jitter = prior.jitter_rel * prior.sigma2
    for _ in range(4):
        cov = model.covariance_matrix(z_grid, prior.eta, prior.sigma2, jitter=jitter)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12 * prior.sigma2 * 10.0)
            continue
        return mean + chol @ draws
    raise NumericalError("covariance Cholesky failed even after jitter escalation")


def draw_counts(
    psi,
    hyp: model.MassHypothesis,
    mu: float,
    template: model.SignalTemplate,
    edges,
    seed: int,
) -> np.ndarray:
    """Poisson counts with per-bin mean exp(psi_i) + mu * s_i."""
    psi = np.asarray(psi, dtype=float)
    s = model.signal_bin_integrals(hyp, template, edges)
    rate = np.exp(psi) + mu * s
    if np.any(rate < 0) or np.any(~np.isfinite(rate)):
        raise ValueError("bin means must be finite and non-negative")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return rng.poisson(rate)


@dataclass(frozen=True)
class TemplateFit:
    """Template plus per-anchor root-mean-square fit residuals."""

    template: model.SignalTemplate
    anchor_rmse: tuple[float, ...]


def _fit_single_anchor(mass: float, histogram: np.ndarray, edges: np.ndarray):
    """Least-squares (scale, width) of the Gaussian-integral model."""
    hist = np.asarray(histogram, dtype=float)
    if np.all(hist == 0.0):
        raise ValueError(f"anchor histogram at mass {mass} is identically zero")
    if np.any(hist < 0.0):
        raise ValueError("anchor histograms must be non-negative")

    def shape(eps: float) -> np.ndarray:
        return np.diff(ndtr((edges - mass) / eps))

    def objective(log_eps: float) -> float:
        basis = shape(math.exp(log_eps))
        denom = float(basis @ basis)
        if denom <= 0:
            return float(hist @ hist)
        c = float(hist @ basis) / denom
        resid = hist - c * basis
        return float(resid @ resid)

    span = edges[-1] - edges[0]
    res = minimize_scalar(
        objective, bounds=(math.log(span * 1e-4), math.log(span)), method="bounded",
        options={"xatol": 1e-12},
    )
    eps = math.exp(res.x)
    basis = shape(eps)
    c = float(hist @ basis) / float(basis @ basis)
    rmse = math.sqrt(res.fun / hist.size)
    if c <= 0:
        raise ValueError(f"fitted scale at mass {mass} is non-positive")
    return c, eps, rmse


def fit_template(anchor_histograms, edges) -> TemplateFit:
    """Fit (scale, width) per anchor histogram and assemble the template.

    ``anchor_histograms`` is a sequence of (mass, per-bin expected-signal
    histogram) pairs on the given edges; at least two anchors are needed
    for interpolation.
    """
    if len(anchor_histograms) < 2:
        raise ValueError("need at least two anchor histograms")
    edges = np.asarray(edges, dtype=float)
    masses, scales, widths, rmses = [], [], [], []
    for mass, hist in anchor_histograms:
        c, eps, rmse = _fit_single_anchor(float(mass), hist, edges)
        masses.append(float(mass))
        scales.append(c)
        widths.append(eps)
        rmses.append(rmse)
    order = np.argsort(masses)
    template = model.SignalTemplate(
        anchor_masses=np.asarray(masses)[order],
        anchor_scales=np.asarray(scales)[order],
        anchor_widths=np.asarray(widths)[order],
    )
    return TemplateFit(template=template, anchor_rmse=tuple(np.asarray(rmses)[order]))


def fit_bernstein_log_intensity(edges, log_intensity_fn) -> np.ndarray:
    """Least-squares Bernstein coefficients of a log-intensity curve.

    Fits on the rescaled bin midpoints; exact whenever the target is a
    polynomial of degree <= 4 in z.
    """
    edges = np.asarray(edges, dtype=float)
    mid = 0.5 * (edges[:-1] + edges[1:])
    z = model.rescale_to_unit(mid, edges[0], edges[-1])
    target = np.asarray([log_intensity_fn(m) for m in mid], dtype=float)
    i = np.arange(5.0)
    basis = (
        np.array([1.0, 4.0, 6.0, 4.0, 1.0]) * z[:, None] ** i * (1.0 - z[:, None]) ** (4.0 - i)
    )
    coeffs, *_ = np.linalg.lstsq(basis, target, rcond=None)
    return coeffs


@dataclass(frozen=True)
class Scenario:
    """A simulated dataset with its generating truth."""

    spectrum: model.BinnedSpectrum
    template: model.SignalTemplate
    gp_prior: model.GpBackgroundPrior
    true_hypothesis: model.MassHypothesis
    true_mu: float
    true_psi: np.ndarray
    seed: int


def make_paper_like_scenario(
    seed: int,
    signal_mass: float | None = 125.0,
    mu: float = 1.0,
    window: tuple[float, float] = DEFAULT_WINDOW,
    n_bins: int = DEFAULT_N_BINS,
    background_total: float = DEFAULT_BACKGROUND_TOTAL,
    falloff_gev: float = DEFAULT_FALLOFF_GEV,
    anchor_masses=DEFAULT_ANCHOR_MASSES,
    anchor_scales=DEFAULT_ANCHOR_SCALES,
    anchor_widths=DEFAULT_ANCHOR_WIDTHS,
    eta: float = DEFAULT_ETA,
    sigma2: float = DEFAULT_SIGMA2,
    signal_scale_factor: float = 1.0,
) -> Scenario:
    """Simulate the default search scenario, optionally injecting a signal.

    ``signal_mass=None`` generates background only.  The background truth
    is a GP draw around the falling Bernstein mean; counts are Poisson.
    """
    lo, hi = window
    edges = np.linspace(lo, hi, n_bins + 1)
    norm = falloff_gev * (1.0 - math.exp(-(hi - lo) / falloff_gev))

    def log_intensity(m: float) -> float:
        return math.log(background_total / norm) - (m - lo) / falloff_gev

    coeffs = fit_bernstein_log_intensity(edges, log_intensity)
    gp_prior = model.GpBackgroundPrior(mean_coeffs=coeffs, eta=eta, sigma2=sigma2)

    template = model.SignalTemplate(
        anchor_masses=np.asarray(anchor_masses, dtype=float),
        anchor_scales=np.asarray(anchor_scales, dtype=float) * signal_scale_factor,
        anchor_widths=np.asarray(anchor_widths, dtype=float),
    )

    ss = np.random.SeedSequence(seed)
    psi_seed, count_seed = [int(s.generate_state(1)[0]) for s in ss.spawn(2)]
    psi = draw_background(gp_prior, edges, psi_seed)
    hyp = model.Absent if signal_mass is None else model.MassHypothesis.at(signal_mass)
    hyp.require_inside(lo, hi)
    counts = draw_counts(psi, hyp, mu, template, edges, count_seed)
    spectrum = model.BinnedSpectrum(edges=edges, counts=counts)
    return Scenario(
        spectrum=spectrum,
        template=template,
        gp_prior=gp_prior,
        true_hypothesis=hyp,
        true_mu=mu if not hyp.is_absent else 0.0,
        true_psi=psi,
        seed=seed,
    )


def make_toy_scenario(
    seed: int,
    signal_mass: float | None = None,
    n_bins: int = 24,
    window: tuple[float, float] = (100.0, 180.0),
    background_total: float = 600.0,
    anchor_scales=(55.0, 60.0, 65.0),
    anchor_widths=(3.0, 3.2, 3.4),
    eta: float = 4.0,
    sigma2: float = 0.01,
    mu: float = 1.0,
) -> Scenario:
    """Small scenario used by calibration tests (few bins, modest counts)."""
    return make_paper_like_scenario(
        seed,
        signal_mass=signal_mass,
        mu=mu,
        window=window,
        n_bins=n_bins,
        background_total=background_total,
        anchor_scales=anchor_scales,
        anchor_widths=anchor_widths,
        eta=eta,
        sigma2=sigma2,
    )
