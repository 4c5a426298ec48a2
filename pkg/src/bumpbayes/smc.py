"""Tempered sequential Monte Carlo sampler for the bump-search posterior.

Bridges from the prior to the posterior through power posteriors
``prior * likelihood^tau`` on an increasing temperature ladder, with
systematic resampling at every temperature followed by Metropolis-Hastings
rejuvenation sweeps.

The log-background is carried in whitened coordinates u with
``psi = prior_mean + sigma * A(eta) u`` where A(eta) is the Cholesky action
of the prior correlation matrix.  The near-singular squared-exponential
prior makes a plain random walk on psi unusable (any step component
outside the smooth subspace is vetoed by the prior), so the psi move is a
preconditioned Crank-Nicolson step on u (prior-reversible, acceptance
driven by the tempered likelihood alone) and the eta/sigma2 move
translates psi along with the hyperparameters.  The mass move is the
adaptive Hastings-corrected independence proposal built from the current
ensemble: an absent-state atom plus a KDE over present masses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import model
from ._toeplitz import sample_batch, whiten_batch
from .errors import DegenerateEnsembleError

__all__ = [
    "MoveConfig",
    "ParticleEnsemble",
    "PosteriorSummary",
    "SmcResult",
    "TemperatureSchedule",
    "increment_weights",
    "map_hyperparameters",
    "move_particles",
    "posterior_summary",
    "resample",
    "run_smc",
    "silverman_bandwidth",
    "weighted_quantile",
]


@dataclass(frozen=True)
class TemperatureSchedule:
    """Strictly increasing temperatures from exactly 0 to exactly 1."""

    taus: np.ndarray

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        if taus.ndim != 1 or taus.size < 2:
            raise ValueError("schedule needs at least the two endpoints")
        if taus[0] != 0.0 or taus[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1 exactly")
        if np.any(np.diff(taus) <= 0):
            raise ValueError("temperatures must be strictly increasing")
        taus.setflags(write=False)
        object.__setattr__(self, "taus", taus)

    @classmethod
    def uniform(cls, size: int = 20) -> "TemperatureSchedule":
        """Uniform ladder of ``size`` temperatures on [0, 1] (the default)."""
        if size < 2:
            raise ValueError("size must be at least 2")
        return cls(np.linspace(0.0, 1.0, size))

    def __len__(self) -> int:
        return self.taus.size


@dataclass
class ParticleEnsemble:
    """Weighted particle population; masses use NaN for the absent case."""

    etas: np.ndarray
    sigma2s: np.ndarray
    psis: np.ndarray
    masses: np.ndarray
    mus: np.ndarray
    normalized_weights: np.ndarray
    rng_seed_record: int

    def __post_init__(self):
        if self.etas.size < 2:
            raise ValueError("ensemble needs at least 2 particles")
        w = np.asarray(self.normalized_weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be non-negative and sum to 1")

    def __len__(self) -> int:
        return self.etas.size

    @property
    def n_bins(self) -> int:
        return self.psis.shape[1]

    @property
    def absent(self) -> np.ndarray:
        return ~np.isfinite(self.masses)

    def particle(self, i: int) -> model.Particle:
        """Materialize particle i as a model-layer value object."""
        hyp = (
            model.Absent
            if not np.isfinite(self.masses[i])
            else model.MassHypothesis.at(self.masses[i])
        )
        w = self.normalized_weights[i]
        return model.Particle(
            eta=float(self.etas[i]),
            sigma2=float(self.sigma2s[i]),
            psi=self.psis[i].copy(),
            mass=hyp,
            mu=float(self.mus[i]),
            log_weight=float(np.log(w)) if w > 0 else -math.inf,
        )

    @property
    def particles(self) -> list[model.Particle]:
        return [self.particle(i) for i in range(len(self))]

    def p_absent(self) -> float:
        return float(np.sum(self.normalized_weights[self.absent]))

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(
            etas=self.etas.copy(),
            sigma2s=self.sigma2s.copy(),
            psis=self.psis.copy(),
            masses=self.masses.copy(),
            mus=self.mus.copy(),
            normalized_weights=self.normalized_weights.copy(),
            rng_seed_record=self.rng_seed_record,
        )


@dataclass(frozen=True)
class MoveConfig:
    """Metropolis-Hastings step sizes and proposal guards.

    ``psi_step`` is the Crank-Nicolson beta in (0, 1] for the whitened
    log-background move (None lets the driver adapt it across
    temperatures); the mass proposal's atom probability is clipped to
    [atom_floor, 1 - atom_floor] so swaps in and out of the absent state
    stay proposable.  ``mass_move=False`` freezes the mass coordinate.
    """

    psi_step: float | None = None
    hyper_step: float = 0.25
    mu_step: float = 0.1
    atom_floor: float = 0.05
    mass_move: bool = True


@dataclass
class TemperatureRecord:
    """Per-temperature trace: tau, ESS, acceptance rates, absent fraction."""

    index: int
    tau: float
    ess: float
    accept_psi: float
    accept_mass: float
    accept_hyper: float
    accept_mu: float
    p_absent_hat: float
    n_unique_resampled: int

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "tau": self.tau,
            "ess": self.ess,
            "accept_psi": self.accept_psi,
            "accept_mass": self.accept_mass,
            "accept_hyper": self.accept_hyper,
            "accept_mu": self.accept_mu,
            "p_absent_hat": self.p_absent_hat,
            "n_unique_resampled": self.n_unique_resampled,
        }


@dataclass
class SmcResult:
    """Final ensemble plus the per-temperature trace."""

    ensemble: ParticleEnsemble
    trace: list[TemperatureRecord]
    intermediates: list[ParticleEnsemble] | None = None


# ---------------------------------------------------------------------------
# Weighting and resampling
# ---------------------------------------------------------------------------


def increment_weights(ensemble: ParticleEnsemble, log_lik_values, delta_tau: float):
    """Temper the ensemble weights by likelihood^delta_tau.

    Returns (normalized_weights, ess); does not mutate the ensemble.
    """
    if delta_tau <= 0:
        raise ValueError("delta_tau must be positive")
    ll = np.asarray(log_lik_values, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(ensemble.normalized_weights) + delta_tau * ll
    norm = logsumexp(logw)
    if not np.isfinite(norm):
        return np.zeros_like(logw), 0.0
    w = np.exp(logw - norm)
    w /= w.sum()
    ess = 1.0 / float(np.sum(w * w))
    return w, ess


def _systematic_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="left")


def resample(ensemble: ParticleEnsemble, seed: int) -> ParticleEnsemble:
    """Systematic resampling to an equally weighted ensemble."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    idx = _systematic_indices(ensemble.normalized_weights, rng)
    n = idx.size
    return ParticleEnsemble(
        etas=ensemble.etas[idx].copy(),
        sigma2s=ensemble.sigma2s[idx].copy(),
        psis=ensemble.psis[idx].copy(),
        masses=ensemble.masses[idx].copy(),
        mus=ensemble.mus[idx].copy(),
        normalized_weights=np.full(n, 1.0 / n),
        rng_seed_record=ensemble.rng_seed_record,
    )


# ---------------------------------------------------------------------------
# GP transform context (whitened coordinates)
# ---------------------------------------------------------------------------


class _GpContext:
    """Grid quantities and the u -> psi transform for the GP prior."""

    def __init__(self, spectrum: model.BinnedSpectrum, gp_prior: model.GpBackgroundPrior):
        self.prior = gp_prior
        edges = spectrum.edges
        mid = spectrum.midpoints
        self.z_grid = model.rescale_to_unit(mid, edges[0], edges[-1])
        self.n = mid.size
        self.mean_vec = model.prior_mean_vector(gp_prior, edges)
        spacing = np.diff(self.z_grid)
        self.uniform = self.n == 1 or bool(
            np.allclose(spacing, spacing[0], rtol=1e-9, atol=1e-12)
        )
        self.jitter_rel = gp_prior.jitter_rel

    def correlation_rows(self, etas) -> np.ndarray:
        d = self.z_grid - self.z_grid[0]
        rows = np.exp(-np.asarray(etas)[:, None] * d[None, :] ** 2)
        rows[:, 0] += self.jitter_rel
        return rows

    def _dense_apply(self, etas, vecs, inverse: bool) -> np.ndarray:
        from scipy.linalg import cholesky, solve_triangular

        out = np.empty_like(vecs)
        for i, eta in enumerate(etas):
            corr = model.covariance_matrix(self.z_grid, float(eta), 1.0, jitter=self.jitter_rel)
            chol = cholesky(corr, lower=True)
            out[i] = solve_triangular(chol, vecs[i], lower=True) if inverse else chol @ vecs[i]
        return out

    def correlated_draws(self, etas, z: np.ndarray) -> np.ndarray:
        """Per-particle A(eta) z with A A^T = R(eta) + jitter*I."""
        if self.uniform:
            return sample_batch(self.correlation_rows(etas), z)
        return self._dense_apply(etas, z, inverse=False)

    def whiten(self, etas, resid: np.ndarray) -> np.ndarray:
        """Inverse transform: recover u from psi - mean = sigma * A(eta) u."""
        if self.uniform:
            return whiten_batch(self.correlation_rows(etas), resid)
        return self._dense_apply(etas, resid, inverse=True)

    def psis_from(self, etas, sigma2s, us) -> np.ndarray:
        return self.mean_vec + np.sqrt(sigma2s)[:, None] * self.correlated_draws(etas, us)


def _ig_log_density(x, shape: float, scale: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    pos = x > 0
    xv = x[pos]
    out[pos] = (
        shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * np.log(xv) - scale / xv
    )
    return out


# ---------------------------------------------------------------------------
# Prior sampling
# ---------------------------------------------------------------------------


def _sample_prior_ensemble(
    spectrum, gp_prior, mass_prior, n_particles, rng, seed_record, mu_prior, ctx
):
    shape, scale = gp_prior.hyperprior_shape, gp_prior.hyperprior_scale
    etas = 1.0 / rng.gamma(shape, 1.0 / scale, size=n_particles)
    sigma2s = 1.0 / rng.gamma(shape, 1.0 / scale, size=n_particles)

    lo, hi = mass_prior.window
    masses = np.where(
        rng.random(n_particles) < mass_prior.p_absent,
        np.nan,
        rng.uniform(lo, hi, size=n_particles),
    )
    if mu_prior is None:
        mus = np.ones(n_particles)
    else:
        mus = np.exp(mu_prior.mu_log + mu_prior.sigma_log * rng.standard_normal(n_particles))

    us = rng.standard_normal((n_particles, spectrum.n_bins))
    psis = ctx.psis_from(etas, sigma2s, us)
    ensemble = ParticleEnsemble(
        etas=etas,
        sigma2s=sigma2s,
        psis=psis,
        masses=masses,
        mus=mus,
        normalized_weights=np.full(n_particles, 1.0 / n_particles),
        rng_seed_record=seed_record,
    )
    return ensemble, us


# ---------------------------------------------------------------------------
# Weighted summaries used by the adaptive proposals
# ---------------------------------------------------------------------------


def weighted_quantile(values, weights, qs):
    """Quantiles of a weighted sample (step-CDF inversion)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cw = np.cumsum(w)
    cw /= cw[-1]
    return np.interp(np.asarray(qs, dtype=float), cw, v)


def silverman_bandwidth(values: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Silverman rule 0.9 * min(sd, IQR/1.34) * n_eff^(-1/5) for weighted data."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("need at least one value")
    if weights is None:
        weights = np.full(values.size, 1.0 / values.size)
    else:
        weights = np.asarray(weights, dtype=float)
        weights = weights / weights.sum()
    mean = float(np.sum(weights * values))
    var = float(np.sum(weights * (values - mean) ** 2))
    sd = math.sqrt(max(var, 0.0))
    q25, q75 = weighted_quantile(values, weights, [0.25, 0.75])
    iqr = q75 - q25
    n_eff = 1.0 / float(np.sum(weights**2))
    spread_candidates = [s for s in (sd, iqr / 1.34) if s > 0]
    if not spread_candidates:
        return max(1e-3, 1e-3 * max(abs(mean), 1.0))
    return 0.9 * min(spread_candidates) * n_eff ** (-0.2)


class _MassProposal:
    """Frozen independence proposal: absent atom + KDE of present masses.

    The continuous part mixes the KDE with a thin uniform layer over the
    window so the Hastings ratio never hits a zero reverse density (a
    particle far from the KDE support would otherwise be unable to move).
    """

    KDE_MIX = 0.98

    def __init__(self, ensemble: ParticleEnsemble, mass_prior: model.MassPrior, atom_floor: float):
        w = ensemble.normalized_weights
        absent = ensemble.absent
        self.window = mass_prior.window
        raw_atom = float(np.sum(w[absent]))
        self.atom = min(max(raw_atom, atom_floor), 1.0 - atom_floor)
        present = ~absent
        if np.any(present):
            self.support = ensemble.masses[present]
            pw = w[present]
            self.support_weights = pw / pw.sum()
            self.bandwidth = silverman_bandwidth(self.support, self.support_weights)
            self.uniform_fallback = False
        else:
            self.support = None
            self.support_weights = None
            self.bandwidth = None
            self.uniform_fallback = True

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.window
        pick_absent = rng.random(size) < self.atom
        uniform_draws = rng.uniform(lo, hi, size=size)
        if self.uniform_fallback:
            cont = uniform_draws
        else:
            idx = rng.choice(self.support.size, size=size, p=self.support_weights)
            kde_draws = self.support[idx] + self.bandwidth * rng.standard_normal(size)
            cont = np.where(rng.random(size) < self.KDE_MIX, kde_draws, uniform_draws)
        return np.where(pick_absent, np.nan, cont)

    def log_density(self, masses: np.ndarray) -> np.ndarray:
        """Log proposal density/mass at each state (NaN encodes absent)."""
        lo, hi = self.window
        out = np.full(masses.shape, math.log(self.atom))
        present = np.isfinite(masses)
        if not np.any(present):
            return out
        uniform_dens = 1.0 / (hi - lo)
        if self.uniform_fallback:
            out[present] = math.log1p(-self.atom) + math.log(uniform_dens)
            return out
        x = masses[present]
        z = (x[:, None] - self.support[None, :]) / self.bandwidth
        kde_dens = (np.exp(-0.5 * z * z) @ self.support_weights) / (
            self.bandwidth * math.sqrt(2.0 * math.pi)
        )
        dens = self.KDE_MIX * kde_dens + (1.0 - self.KDE_MIX) * uniform_dens
        out[present] = math.log1p(-self.atom) + np.log(dens)
        return out


# ---------------------------------------------------------------------------
# Metropolis-Hastings rejuvenation
# ---------------------------------------------------------------------------


class _SweepState:
    """Mutable per-particle state plus cached likelihood and signal rows."""

    def __init__(self, ensemble, ctx, spectrum, template, mass_prior, mu_prior, us=None):
        self.ens = ensemble
        self.ctx = ctx
        self.spectrum = spectrum
        self.template = template
        self.mass_prior = mass_prior
        self.mu_prior = mu_prior
        self.us = (
            us
            if us is not None
            else ctx.whiten(ensemble.etas, (ensemble.psis - ctx.mean_vec) / np.sqrt(ensemble.sigma2s)[:, None])
        )
        self.s = model.signal_bin_integrals_batch(ensemble.masses, template, spectrum.edges)
        self.ll = model.log_likelihood_batch(spectrum.counts, ensemble.psis, self.s, ensemble.mus)

    def reorder(self, idx: np.ndarray) -> None:
        self.us = self.us[idx]
        self.s = self.s[idx]
        self.ll = self.ll[idx]

    def log_mass_prior(self, masses: np.ndarray) -> np.ndarray:
        lo, hi = self.mass_prior.window
        p = self.mass_prior.p_absent
        out = np.full(masses.shape, math.log(p))
        present = np.isfinite(masses)
        inside = present & (masses > lo) & (masses < hi)
        out[present] = -np.inf
        out[inside] = math.log1p(-p) - math.log(hi - lo)
        return out


def _sweep_psi(state: _SweepState, tau, rng, beta, accept_counter):
    ens = state.ens
    n_particles, n = ens.psis.shape
    z = rng.standard_normal((n_particles, n))
    accept_u = rng.random(n_particles)
    if beta == 0.0:
        accept_counter.append(1.0)
        return
    us_new = math.sqrt(1.0 - beta * beta) * state.us + beta * z
    psis_new = state.ctx.psis_from(ens.etas, ens.sigma2s, us_new)
    ll_new = model.log_likelihood_batch(state.spectrum.counts, psis_new, state.s, ens.mus)
    log_alpha = tau * (ll_new - state.ll)
    accept = np.log(accept_u) < log_alpha
    ens.psis[accept] = psis_new[accept]
    state.us[accept] = us_new[accept]
    state.ll[accept] = ll_new[accept]
    accept_counter.append(float(np.mean(accept)))


def _sweep_mass(state: _SweepState, tau, rng, proposal: _MassProposal, accept_counter):
    ens = state.ens
    n_particles = len(ens)
    masses_new = proposal.draw(n_particles, rng)
    accept_u = rng.random(n_particles)
    s_new = model.signal_bin_integrals_batch(masses_new, state.template, state.spectrum.edges)
    ll_new = model.log_likelihood_batch(state.spectrum.counts, ens.psis, s_new, ens.mus)
    log_alpha = (
        tau * (ll_new - state.ll)
        + state.log_mass_prior(masses_new)
        - state.log_mass_prior(ens.masses)
        + proposal.log_density(ens.masses)
        - proposal.log_density(masses_new)
    )
    accept = np.log(accept_u) < log_alpha
    ens.masses[accept] = masses_new[accept]
    state.s[accept] = s_new[accept]
    state.ll[accept] = ll_new[accept]
    accept_counter.append(float(np.mean(accept)))


def _sweep_hyper(state: _SweepState, tau, rng, hyper_step, accept_counter):
    ens = state.ens
    n_particles = len(ens)
    z1 = rng.standard_normal(n_particles)
    z2 = rng.standard_normal(n_particles)
    accept_u = rng.random(n_particles)
    if hyper_step == 0.0:
        accept_counter.append(1.0)
        return
    etas_new = ens.etas * np.exp(hyper_step * z1)
    sigma2s_new = ens.sigma2s * np.exp(hyper_step * z2)
    psis_new = state.ctx.psis_from(etas_new, sigma2s_new, state.us)
    ll_new = model.log_likelihood_batch(state.spectrum.counts, psis_new, state.s, ens.mus)
    prior = state.ctx.prior
    shape, scale = prior.hyperprior_shape, prior.hyperprior_scale
    d_hyper = (
        _ig_log_density(etas_new, shape, scale)
        - _ig_log_density(ens.etas, shape, scale)
        + _ig_log_density(sigma2s_new, shape, scale)
        - _ig_log_density(ens.sigma2s, shape, scale)
    )
    jacobian = np.log(etas_new / ens.etas) + np.log(sigma2s_new / ens.sigma2s)
    log_alpha = tau * (ll_new - state.ll) + d_hyper + jacobian
    accept = np.log(accept_u) < log_alpha
    ens.etas[accept] = etas_new[accept]
    ens.sigma2s[accept] = sigma2s_new[accept]
    ens.psis[accept] = psis_new[accept]
    state.ll[accept] = ll_new[accept]
    accept_counter.append(float(np.mean(accept)))


def _sweep_mu(state: _SweepState, tau, rng, mu_step, accept_counter):
    ens = state.ens
    if state.mu_prior is None:
        return
    n_particles = len(ens)
    z = rng.standard_normal(n_particles)
    accept_u = rng.random(n_particles)
    if mu_step == 0.0:
        accept_counter.append(1.0)
        return
    mus_new = ens.mus * np.exp(mu_step * z)
    ll_new = model.log_likelihood_batch(state.spectrum.counts, ens.psis, state.s, mus_new)
    prior = state.mu_prior
    z_new = (np.log(mus_new) - prior.mu_log) / prior.sigma_log
    z_old = (np.log(ens.mus) - prior.mu_log) / prior.sigma_log
    d_prior = -0.5 * (z_new**2 - z_old**2) - np.log(mus_new / ens.mus)
    jacobian = np.log(mus_new / ens.mus)
    log_alpha = tau * (ll_new - state.ll) + d_prior + jacobian
    accept = np.log(accept_u) < log_alpha
    ens.mus[accept] = mus_new[accept]
    state.ll[accept] = ll_new[accept]
    accept_counter.append(float(np.mean(accept)))


def _default_pcn_beta(ensemble: ParticleEnsemble) -> float:
    """Heuristic Crank-Nicolson step: ensemble psi spread over prior scale."""
    w = ensemble.normalized_weights
    mean_psi = w @ ensemble.psis
    wvar = w @ (ensemble.psis - mean_psi) ** 2
    prior_sd = float(weighted_quantile(np.sqrt(ensemble.sigma2s), w, [0.5]))
    ratio = math.sqrt(float(np.median(wvar))) / max(prior_sd, 1e-12)
    return min(max(ratio, 1e-3), 0.8)


def move_particles(
    ensemble: ParticleEnsemble,
    data: model.BinnedSpectrum,
    template: model.SignalTemplate,
    gp_prior: model.GpBackgroundPrior,
    mass_prior: model.MassPrior,
    tau: float,
    seed: int,
    sweeps: int = 1,
    mu_prior: model.LogNormalPrior | None = None,
    config: MoveConfig = MoveConfig(),
    _state: "_SweepState | None" = None,
):
    """Apply MH rejuvenation sweeps targeting prior * likelihood^tau.

    Sweep order per pass: log-background (Crank-Nicolson on the whitened
    coordinates), mass (adaptive independence proposal), hyperparameters
    (log-scale random walk carried jointly with psi), and the
    cross-section scale in free-mu mode.  Proposal parameters are frozen
    from the entry ensemble, so the kernel is a fixed MH kernel that
    leaves the tempered posterior invariant.  Returns (ensemble, rates);
    the ensemble is mutated in place.
    """
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must lie in (0, 1]")
    ctx = _GpContext(data, gp_prior)
    state = (
        _state
        if _state is not None
        else _SweepState(ensemble, ctx, data, template, mass_prior, mu_prior)
    )
    ens = state.ens

    beta = config.psi_step if config.psi_step is not None else _default_pcn_beta(ens)
    if not (0.0 <= beta <= 1.0):
        raise ValueError("psi_step (Crank-Nicolson beta) must lie in [0, 1]")
    proposal = _MassProposal(ens, mass_prior, config.atom_floor)

    acc_psi: list[float] = []
    acc_mass: list[float] = []
    acc_hyper: list[float] = []
    acc_mu: list[float] = []
    for sweep in range(sweeps):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(sweep,))
        rngs = [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(4)]
        _sweep_psi(state, tau, rngs[0], beta, acc_psi)
        if config.mass_move:
            _sweep_mass(state, tau, rngs[1], proposal, acc_mass)
        _sweep_hyper(state, tau, rngs[2], config.hyper_step, acc_hyper)
        _sweep_mu(state, tau, rngs[3], config.mu_step, acc_mu)

    rates = {
        "psi": float(np.mean(acc_psi)) if acc_psi else math.nan,
        "mass": float(np.mean(acc_mass)) if acc_mass else math.nan,
        "hyper": float(np.mean(acc_hyper)) if acc_hyper else math.nan,
        "mu": float(np.mean(acc_mu)) if acc_mu else math.nan,
    }
    return ens, rates


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def run_smc(
    data: model.BinnedSpectrum,
    template: model.SignalTemplate,
    gp_prior: model.GpBackgroundPrior,
    mass_prior: model.MassPrior,
    schedule: TemperatureSchedule | None = None,
    n_particles: int = 2000,
    moves_per_temp: int = 5,
    seed: int = 0,
    mu_prior: model.LogNormalPrior | None = None,
    move_config: MoveConfig = MoveConfig(),
    keep_intermediates: bool = False,
    on_temperature=None,
) -> SmcResult:
    """Run the tempered SMC sampler and return the final ensemble + trace.

    Deterministic given ``seed``.  Raises ``DegenerateEnsembleError`` when
    every incremental weight vanishes at some temperature.  When
    ``keep_intermediates`` is set, a snapshot of the ensemble after every
    temperature is retained; ``on_temperature(record, ensemble)`` is
    invoked after each temperature.  Unless ``psi_step`` is pinned in
    ``move_config``, the Crank-Nicolson step adapts across temperatures
    toward a 0.234 acceptance rate.
    """
    if schedule is None:
        schedule = TemperatureSchedule.uniform(20)
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    mass_prior = model.MassPrior(mass_prior.p_absent, data.window)

    ctx = _GpContext(data, gp_prior)
    init_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    )
    ensemble, us = _sample_prior_ensemble(
        data, gp_prior, mass_prior, n_particles, init_rng, seed, mu_prior, ctx
    )
    state = _SweepState(ensemble, ctx, data, template, mass_prior, mu_prior, us=us)

    trace: list[TemperatureRecord] = []
    intermediates: list[ParticleEnsemble] | None = [] if keep_intermediates else None
    psi_beta = move_config.psi_step if move_config.psi_step is not None else 0.5

    taus = schedule.taus
    for t in range(1, taus.size):
        delta = taus[t] - taus[t - 1]
        weights, ess = increment_weights(ensemble, state.ll, delta)
        if ess == 0.0:
            raise DegenerateEnsembleError(t, float(taus[t]))
        ensemble.normalized_weights = weights

        resample_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1, t)))
        )
        idx = _systematic_indices(weights, resample_rng)
        n_unique = int(np.unique(idx).size)
        ensemble.etas = ensemble.etas[idx]
        ensemble.sigma2s = ensemble.sigma2s[idx]
        ensemble.psis = ensemble.psis[idx]
        ensemble.masses = ensemble.masses[idx]
        ensemble.mus = ensemble.mus[idx]
        ensemble.normalized_weights = np.full(n_particles, 1.0 / n_particles)
        state.reorder(idx)

        if moves_per_temp > 0:
            temp_config = MoveConfig(
                psi_step=psi_beta,
                hyper_step=move_config.hyper_step,
                mu_step=move_config.mu_step,
                atom_floor=move_config.atom_floor,
                mass_move=move_config.mass_move,
            )
            _, rates = move_particles(
                ensemble,
                data,
                template,
                gp_prior,
                mass_prior,
                tau=float(taus[t]),
                seed=int(
                    np.random.SeedSequence(entropy=seed, spawn_key=(2, t)).generate_state(1)[0]
                ),
                sweeps=moves_per_temp,
                mu_prior=mu_prior,
                config=temp_config,
                _state=state,
            )
            if move_config.psi_step is None and math.isfinite(rates["psi"]):
                psi_beta = min(max(psi_beta * math.exp(rates["psi"] - 0.234), 1e-4), 1.0)
        else:
            rates = {"psi": math.nan, "mass": math.nan, "hyper": math.nan, "mu": math.nan}

        record = TemperatureRecord(
            index=t,
            tau=float(taus[t]),
            ess=float(ess),
            accept_psi=rates["psi"],
            accept_mass=rates["mass"],
            accept_hyper=rates["hyper"],
            accept_mu=rates["mu"],
            p_absent_hat=ensemble.p_absent(),
            n_unique_resampled=n_unique,
        )
        trace.append(record)
        if on_temperature is not None:
            on_temperature(record, ensemble)
        if keep_intermediates:
            intermediates.append(ensemble.copy())

    return SmcResult(ensemble=ensemble, trace=trace, intermediates=intermediates)


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


@dataclass
class PosteriorSummary:
    """Mass-hypothesis summary of a weighted ensemble."""

    p_absent_hat: float
    p_absent_upper90: float
    kde_grid: np.ndarray
    kde_density: np.ndarray
    map_mass: model.MassHypothesis
    mu_quantiles: dict[str, float] | None = None


def posterior_summary(
    ensemble: ParticleEnsemble,
    kde_bandwidth_rule: str | float = "silverman",
    grid_size: int = 801,
    window: tuple[float, float] | None = None,
    include_mu: bool = False,
) -> PosteriorSummary:
    """Weighted absent fraction, its 90% upper bound, and the mass KDE.

    When no absent draws remain the one-sided 90% upper bound is
    1 - 0.1^(1/N_eff) with N_eff the effective sample size of the weights;
    otherwise a one-sided normal bound on the weighted fraction.  The KDE
    integrates to 1 - p_absent_hat over the window.
    """
    w = ensemble.normalized_weights
    absent = ensemble.absent
    p_hat = float(np.sum(w[absent]))
    n_eff = 1.0 / float(np.sum(w * w))
    if p_hat == 0.0:
        upper = 1.0 - 0.1 ** (1.0 / n_eff)
    else:
        se = math.sqrt(max(p_hat * (1.0 - p_hat) / n_eff, 0.0))
        upper = min(1.0, p_hat + 1.2815515655446004 * se)

    if window is None:
        masses = ensemble.masses[~absent]
        if masses.size:
            span = max(masses.max() - masses.min(), 1e-6)
            window = (float(masses.min() - 0.05 * span), float(masses.max() + 0.05 * span))
        else:
            window = (0.0, 1.0)
    lo, hi = window
    grid = np.linspace(lo, hi, grid_size)

    if p_hat >= 1.0 or not np.any(~absent):
        return PosteriorSummary(
            p_absent_hat=p_hat,
            p_absent_upper90=upper,
            kde_grid=grid,
            kde_density=np.zeros_like(grid),
            map_mass=model.Absent,
        )

    masses = ensemble.masses[~absent]
    weights = w[~absent]
    weights = weights / weights.sum()
    if kde_bandwidth_rule == "silverman":
        bandwidth = silverman_bandwidth(masses, weights)
    else:
        bandwidth = float(kde_bandwidth_rule)
    z = (grid[:, None] - masses[None, :]) / bandwidth
    density = (np.exp(-0.5 * z * z) @ weights) / (bandwidth * math.sqrt(2 * math.pi))
    total = np.trapezoid(density, grid)
    if total > 0:
        density *= (1.0 - p_hat) / total
    map_mass = model.MassHypothesis.at(float(grid[np.argmax(density)]))

    mu_q = None
    if include_mu:
        qs = weighted_quantile(ensemble.mus, w, [0.025, 0.5, 0.975])
        mu_q = {"q025": float(qs[0]), "q50": float(qs[1]), "q975": float(qs[2])}
    return PosteriorSummary(
        p_absent_hat=p_hat,
        p_absent_upper90=upper,
        kde_grid=grid,
        kde_density=density,
        map_mass=map_mass,
        mu_quantiles=mu_q,
    )


def map_hyperparameters(ensemble: ParticleEnsemble) -> tuple[float, float]:
    """Posterior-mode (eta, sigma2) via weighted KDE argmax in log space."""
    from scipy.stats import gaussian_kde

    logs = np.vstack([np.log(ensemble.etas), np.log(ensemble.sigma2s)])
    w = ensemble.normalized_weights
    if np.allclose(logs.std(axis=1), 0.0):
        idx = int(np.argmax(w))
        return float(ensemble.etas[idx]), float(ensemble.sigma2s[idx])
    try:
        kde = gaussian_kde(logs, weights=w)
        dens = kde(logs)
    except np.linalg.LinAlgError:
        dens = w
    idx = int(np.argmax(dens))
    return float(ensemble.etas[idx]), float(ensemble.sigma2s[idx])
