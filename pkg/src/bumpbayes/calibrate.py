"""Frequency calibration of the Bayes rule and the look-elsewhere baseline.

The discovery threshold on the absent-state posterior comes from
rare-event importance sampling: pseudo-experiments are generated under
the signal-present model (mass from its prior, background from the
supplied posterior ensemble), each scanned with the fast Laplace
approximation, and reweighted by the absent-vs-present Bayes factor so
that tiny null tail probabilities are estimable at moderate sample sizes.
Exclusion thresholds use plain Monte Carlo per coarse mass followed by a
Gaussian kernel smooth.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from . import laplace, model
from .errors import InsufficientSamplesError

__all__ = [
    "CalibrationResult",
    "calibrate_discovery",
    "calibrate_exclusion",
    "estimate_alpha_forward",
    "gross_vitells_global_p",
    "hybrid_scan_grid",
    "importance_weight",
    "threshold_from_samples",
]


@dataclass
class CalibrationResult:
    """Calibrated thresholds plus the Monte Carlo metadata to reproduce them."""

    q_absent: float | None = None
    alpha1: float | None = None
    mc_stderr: float | None = None
    n_samples: int = 0
    exclusion_grid: np.ndarray | None = None
    exclusion_thresholds: np.ndarray | None = None
    exclusion_coarse_grid: np.ndarray | None = None
    exclusion_coarse_thresholds: np.ndarray | None = None
    alpha2: float | None = None
    smoothing_bandwidth: float | None = None
    seed: int | None = None
    discovery_p_values: np.ndarray | None = field(default=None, repr=False)
    discovery_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.q_absent is not None and not (0.0 < self.q_absent < 1.0):
            raise ValueError("q_absent must lie in (0, 1)")
        if self.exclusion_thresholds is not None and np.any(
            np.asarray(self.exclusion_thresholds) < 0
        ):
            raise ValueError("exclusion thresholds must be non-negative")

    def threshold_at(self, mass) -> np.ndarray | float:
        if self.exclusion_grid is None:
            raise ValueError("no exclusion thresholds available")
        return np.interp(mass, self.exclusion_grid, self.exclusion_thresholds)


def importance_weight(scan: laplace.MassPosterior, mass_prior: model.MassPrior) -> float:
    """Null-over-alternative importance weight from one posterior scan.

    The absent-model over present-model evidence ratio, expressed through
    the scan output as posterior odds over prior odds:
    ``W = p_absent * (1 - p0) / (p0 * integral(density))`` with the
    continuous mass integrated by trapezoid over the scan grid.
    """
    cont = float(np.trapezoid(scan.density, scan.grid))
    p0 = mass_prior.p_absent
    denominator = p0 * cont
    if denominator <= 0.0 or scan.p_absent >= 1.0:
        raise ValueError("degenerate posterior: no continuous mass in the scan")
    return float(scan.p_absent * (1.0 - p0) / denominator)


def _draw_background_rows(ensemble, rng: np.random.Generator, size: int) -> np.ndarray:
    idx = rng.choice(len(ensemble.normalized_weights), size=size, p=ensemble.normalized_weights)
    return np.asarray(ensemble.psis)[idx]


def _parallel_map(fn, n: int, threads: int):
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def hybrid_scan_grid(
    window: tuple[float, float],
    focus_mass: float | None = None,
    coarse: float = 2.0,
    fine: float = 0.25,
    half_width: float = 8.0,
) -> np.ndarray:
    """Coarse scan grid with local refinement around a focus mass.

    Keeps calibration scans affordable: the posterior density only needs
    fine resolution near the injected (or scanned) mass, while the
    normalization integral tolerates a coarse grid elsewhere.
    """
    lo, hi = window
    pts = [np.arange(lo + coarse, hi - coarse / 2, coarse)]
    if focus_mass is not None:
        left = max(lo + fine, focus_mass - half_width)
        right = min(hi - fine, focus_mass + half_width)
        pts.append(np.arange(left, right + fine / 2, fine))
        pts.append(np.asarray([focus_mass]))
    grid = np.unique(np.concatenate(pts))
    return grid[(grid > lo) & (grid < hi)]


def threshold_from_samples(p_values, weights, alpha1: float, n_total: int | None = None):
    """Solve the weighted tail equation for the discovery threshold.

    Sorts the statistics ascending, accumulates weights, and returns the
    largest threshold whose weighted tail average stays at or below
    ``alpha1`` together with the Monte Carlo stderr of the tail sum at
    that threshold.
    """
    p_values = np.asarray(p_values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = p_values.size if n_total is None else int(n_total)
    order = np.argsort(p_values)
    p_sorted = p_values[order]
    w_sorted = weights[order]
    cumulative = np.cumsum(w_sorted) / n

    if alpha1 >= 1.0:
        q = float(np.max(p_values))
        indicator = (p_values <= q) * weights
        return q, float(np.std(indicator, ddof=1) / math.sqrt(n))

    crossing = np.nonzero(cumulative > alpha1)[0]
    if crossing.size == 0:
        raise InsufficientSamplesError(
            f"insufficient samples for target alpha: accumulated weight "
            f"{cumulative[-1]:.3g} never reaches alpha1={alpha1:.3g}; "
            f"increase n_mc (suggest at least {2 * n})",
            suggested_n=2 * n,
        )
    q = float(p_sorted[crossing[0]])
    indicator = (p_values < q) * weights
    stderr = float(np.std(indicator, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return q, stderr


def calibrate_discovery(
    alpha1: float,
    background_posterior,
    template: model.SignalTemplate,
    gp_prior: model.GpBackgroundPrior,
    mass_prior: model.MassPrior,
    spectrum_edges,
    laplace_config: laplace.LaplaceConfig,
    n_mc: int,
    seed: int,
    scan_grid: np.ndarray | None = None,
    threads: int = 1,
) -> CalibrationResult:
    """Importance-sampling calibration of the discovery threshold.

    Each iteration draws a mass from the uniform present-prior, a
    background realization from the posterior ensemble, Poisson counts
    with the mu=1 signal, then records the Laplace-scan absent posterior
    and its importance weight.  The threshold solves the weighted tail
    equation at ``alpha1``.
    """
    if not (0.0 < alpha1 <= 1.0):
        raise ValueError("alpha1 must lie in (0, 1]")
    if n_mc < 10:
        raise ValueError("n_mc too small to calibrate anything")
    edges = np.asarray(spectrum_edges, dtype=float)
    lo, hi = float(edges[0]), float(edges[-1])

    def one(i: int):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(0, i)))
        )
        m_i = rng.uniform(lo, hi)
        psi = _draw_background_rows(background_posterior, rng, 1)[0]
        s = model.signal_bin_integrals(model.MassHypothesis.at(m_i), template, edges)
        counts = rng.poisson(np.exp(psi) + s)
        spectrum = model.BinnedSpectrum(edges=edges, counts=counts)
        grid = scan_grid if scan_grid is not None else hybrid_scan_grid((lo, hi), m_i)
        scan = laplace.mass_posterior_scan(
            spectrum, template, gp_prior, mass_prior, grid=grid, config=laplace_config
        )
        return scan.p_absent, importance_weight(scan, mass_prior)

    results = _parallel_map(one, n_mc, threads)
    p_values = np.array([r[0] for r in results])
    weights = np.array([r[1] for r in results])
    q, stderr = threshold_from_samples(p_values, weights, alpha1)
    return CalibrationResult(
        q_absent=q,
        alpha1=alpha1,
        mc_stderr=stderr,
        n_samples=n_mc,
        seed=seed,
        discovery_p_values=p_values,
        discovery_weights=weights,
    )


def calibrate_exclusion(
    alpha2: float,
    coarse_grid,
    background_posterior,
    template: model.SignalTemplate,
    gp_prior: model.GpBackgroundPrior,
    mass_prior: model.MassPrior,
    spectrum_edges,
    laplace_config: laplace.LaplaceConfig,
    n_mc: int,
    seed: int,
    bandwidth: float = 2.0,
    fine_spacing: float = 0.25,
    threads: int = 1,
    scan_coarse: float = 2.0,
    scan_fine: float = 0.25,
    scan_half_width: float = 8.0,
) -> CalibrationResult:
    """Per-mass exclusion thresholds as empirical alpha2-quantiles.

    For each coarse mass, replicates signal-at-m data (mu=1, backgrounds
    from the posterior ensemble), records the scan density at m, and
    takes the alpha2 sample quantile; thresholds are then kernel-smoothed
    onto the fine grid.
    """
    if not (0.0 < alpha2 < 1.0):
        raise ValueError("alpha2 must lie in (0, 1)")
    if n_mc * alpha2 < 5:
        raise InsufficientSamplesError(
            f"n_mc*alpha2 = {n_mc * alpha2:.1f} < 5: the quantile would be unstable; "
            f"increase n_mc to at least {math.ceil(5 / alpha2)}",
            suggested_n=math.ceil(5 / alpha2),
        )
    edges = np.asarray(spectrum_edges, dtype=float)
    lo, hi = float(edges[0]), float(edges[-1])
    coarse_grid = np.asarray(coarse_grid, dtype=float)
    if np.any(coarse_grid <= lo) or np.any(coarse_grid >= hi):
        raise ValueError("coarse grid must lie strictly inside the window")

    coarse_thresholds = np.empty(coarse_grid.size)
    for j, m_j in enumerate(coarse_grid):
        s = model.signal_bin_integrals(model.MassHypothesis.at(m_j), template, edges)
        grid = hybrid_scan_grid(
            (lo, hi), float(m_j), coarse=scan_coarse, fine=scan_fine,
            half_width=scan_half_width,
        )

        def one(i: int, m_j=m_j, s=s, grid=grid, j=j):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1, j, i)))
            )
            psi = _draw_background_rows(background_posterior, rng, 1)[0]
            counts = rng.poisson(np.exp(psi) + s)
            spectrum = model.BinnedSpectrum(edges=edges, counts=counts)
            scan = laplace.mass_posterior_scan(
                spectrum, template, gp_prior, mass_prior, grid=grid, config=laplace_config
            )
            return scan.density_at(float(m_j))

        values = np.array(_parallel_map(one, n_mc, threads))
        coarse_thresholds[j] = float(np.quantile(values, alpha2))

    fine_grid = laplace.default_mass_grid((lo, hi), fine_spacing)
    z = (fine_grid[:, None] - coarse_grid[None, :]) / bandwidth
    kernel = np.exp(-0.5 * z * z)
    fine_thresholds = (kernel @ coarse_thresholds) / np.sum(kernel, axis=1)
    return CalibrationResult(
        alpha2=alpha2,
        n_samples=n_mc,
        seed=seed,
        exclusion_grid=fine_grid,
        exclusion_thresholds=fine_thresholds,
        exclusion_coarse_grid=coarse_grid,
        exclusion_coarse_thresholds=coarse_thresholds,
        smoothing_bandwidth=bandwidth,
    )


def estimate_alpha_forward(
    q: float,
    hypothesis: model.MassHypothesis,
    background_posterior,
    template: model.SignalTemplate,
    gp_prior: model.GpBackgroundPrior,
    mass_prior: model.MassPrior,
    spectrum_edges,
    laplace_config: laplace.LaplaceConfig,
    n_mc: int,
    seed: int,
    threads: int = 1,
    scan_coarse: float = 2.0,
    scan_fine: float = 0.25,
    scan_half_width: float = 8.0,
) -> dict:
    """Plain Monte Carlo estimate of the relevant tail probability.

    Under the absent hypothesis the statistic is the posterior atom
    pi(absent|y); under a present hypothesis it is the posterior density
    at the true mass.  Returns {"alpha_hat", "stderr", "n_mc"}.
    """
    if q < 0:
        raise ValueError("q must be non-negative")
    edges = np.asarray(spectrum_edges, dtype=float)
    lo, hi = float(edges[0]), float(edges[-1])
    s = model.signal_bin_integrals(hypothesis, template, edges)
    focus = None if hypothesis.is_absent else float(hypothesis.mass)
    grid = hybrid_scan_grid(
        (lo, hi), focus, coarse=scan_coarse, fine=scan_fine, half_width=scan_half_width
    )

    def one(i: int):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(2, i)))
        )
        psi = _draw_background_rows(background_posterior, rng, 1)[0]
        counts = rng.poisson(np.exp(psi) + s)
        spectrum = model.BinnedSpectrum(edges=edges, counts=counts)
        scan = laplace.mass_posterior_scan(
            spectrum, template, gp_prior, mass_prior, grid=grid, config=laplace_config
        )
        stat = scan.p_absent if hypothesis.is_absent else scan.density_at(focus)
        return 1.0 if stat < q else 0.0

    hits = np.array(_parallel_map(one, n_mc, threads))
    alpha_hat = float(np.mean(hits))
    stderr = float(math.sqrt(max(alpha_hat * (1.0 - alpha_hat), 0.0) / n_mc))
    return {"alpha_hat": alpha_hat, "stderr": stderr, "n_mc": n_mc}


def gross_vitells_global_p(
    observed_max: float,
    dof: int,
    n_null_sims: int,
    local_stat_scan,
    seed: int,
) -> dict:
    """Upcrossing-corrected global p-value of a scan maximum.

    ``local_stat_scan(rng)`` must return one null realization of the local
    test statistics over the scan grid.  The global p-value approximation
    is the chi-square tail at the observed maximum plus the mean number of
    upcrossings of that level across null scans (capped at 1).
    """
    if dof < 1:
        raise ValueError("dof must be at least 1")
    local_p = float(chi2.sf(observed_max, dof))
    upcrossings = np.empty(n_null_sims)
    for i in range(n_null_sims):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(3, i)))
        )
        stats = np.asarray(local_stat_scan(rng), dtype=float)
        if stats.size < 2:
            upcrossings[i] = 0.0
        else:
            upcrossings[i] = float(
                np.sum((stats[:-1] <= observed_max) & (stats[1:] > observed_max))
            )
    mean_up = float(np.mean(upcrossings)) if n_null_sims > 0 else 0.0
    stderr_up = (
        float(np.std(upcrossings, ddof=1) / math.sqrt(n_null_sims)) if n_null_sims > 1 else 0.0
    )
    return {
        "global_p": min(1.0, local_p + mean_up),
        "local_p": local_p,
        "mean_upcrossings": mean_up,
        "stderr": stderr_up,
        "n_null_sims": n_null_sims,
    }
