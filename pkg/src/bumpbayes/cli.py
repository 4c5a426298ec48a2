"""Command-line front end: simulate -> fit -> calibrate -> decide, gv-baseline.

Every command takes a layered JSON config (defaults mirror the standard
search setup), a seed, and an output directory; outputs are JSON
documents, CSV tables, and PNG figures, all reproducible byte-for-byte
given the same seed and thread count.

Exit codes: 0 success, 2 usage or parse error, 3 numerical failure,
4 insufficient Monte Carlo samples.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, calibrate, decision, io, laplace, model, plots, simulate, smc
from .errors import InsufficientSamplesError, NumericalError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_SAMPLES = 4


DEFAULT_CONFIG = {
    "scenario": {
        "window": [100.0, 180.0],
        "n_bins": 322,
        "background_total": simulate.DEFAULT_BACKGROUND_TOTAL,
        "falloff_scale_gev": simulate.DEFAULT_FALLOFF_GEV,
        "signal_mass": 125.0,
        "anchor_masses": list(simulate.DEFAULT_ANCHOR_MASSES),
        "anchor_scales": list(simulate.DEFAULT_ANCHOR_SCALES),
        "anchor_widths": list(simulate.DEFAULT_ANCHOR_WIDTHS),
        "eta": simulate.DEFAULT_ETA,
        "sigma2": simulate.DEFAULT_SIGMA2,
        "mu": 1.0,
    },
    "priors": {
        "p_absent": 0.5,
        "hyperprior_shape": 1.0,
        "hyperprior_scale": 1.0,
        "jitter_rel": 1e-8,
        "mean_coeffs": None,
        "mu_lognormal": [0.0, 0.05],
    },
    "smc": {
        "n_particles": 2000,
        "n_temperatures": 20,
        "moves_per_temp": 5,
        "free_mu": False,
        "hyper_step": 0.25,
        "mu_step": 0.1,
    },
    "laplace": {
        "tol": 1e-8,
        "max_iter": 100,
        "grid_spacing": 0.25,
    },
    "calibration": {
        "alpha1": 3e-7,
        "alpha2": 0.05,
        "n_mc_discovery": 5000,
        "n_mc_exclusion": 400,
        "coarse_spacing": 2.0,
        "smoothing_bandwidth": 2.0,
        "exclusion_coarse_masses": None,
    },
    "decision": {
        "credible_level": 0.95,
    },
    "gv": {
        "dof": 1,
        "n_null_sims": 2000,
        "grid_size": 101,
        "correlation_length": 0.1,
        "local_alpha": 0.01,
        "observed_max": None,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise KeyError(f"unknown config key: {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            merged = copy.deepcopy(out[key])
            for inner_key, inner_value in value.items():
                if inner_key not in merged:
                    raise KeyError(f"unknown config key: {key}.{inner_key}")
                merged[inner_key] = inner_value
            out[key] = merged
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ValueError(f"config {path} must be a JSON object")
    return _deep_merge(DEFAULT_CONFIG, user)


def _mean_coeffs(config: dict) -> np.ndarray:
    priors = config["priors"]
    if priors["mean_coeffs"] is not None:
        return np.asarray(priors["mean_coeffs"], dtype=float)
    scenario = config["scenario"]
    lo, hi = scenario["window"]
    falloff = scenario["falloff_scale_gev"]
    total = scenario["background_total"]
    norm = falloff * (1.0 - math.exp(-(hi - lo) / falloff))
    edges = np.linspace(lo, hi, int(scenario["n_bins"]) + 1)
    return simulate.fit_bernstein_log_intensity(
        edges, lambda m: math.log(total / norm) - (m - lo) / falloff
    )


def _gp_prior(config: dict) -> model.GpBackgroundPrior:
    scenario = config["scenario"]
    priors = config["priors"]
    return model.GpBackgroundPrior(
        mean_coeffs=_mean_coeffs(config),
        eta=scenario["eta"],
        sigma2=scenario["sigma2"],
        hyperprior_shape=priors["hyperprior_shape"],
        hyperprior_scale=priors["hyperprior_scale"],
        jitter_rel=priors["jitter_rel"],
    )


def _outdir(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    digest = io.config_digest(config)
    scenario_cfg = config["scenario"]
    out = _outdir(args)
    signal_mass = None if args.no_signal else scenario_cfg["signal_mass"]
    scenario = simulate.make_paper_like_scenario(
        seed=args.seed,
        signal_mass=signal_mass,
        mu=scenario_cfg["mu"],
        window=tuple(scenario_cfg["window"]),
        n_bins=int(scenario_cfg["n_bins"]),
        background_total=scenario_cfg["background_total"],
        falloff_gev=scenario_cfg["falloff_scale_gev"],
        anchor_masses=scenario_cfg["anchor_masses"],
        anchor_scales=scenario_cfg["anchor_scales"],
        anchor_widths=scenario_cfg["anchor_widths"],
        eta=scenario_cfg["eta"],
        sigma2=scenario_cfg["sigma2"],
    )

    io.write_document(
        out / "spectrum.json", "spectrum", io.spectrum_payload(scenario.spectrum),
        seed=args.seed, digest=digest,
    )
    io.write_document(
        out / "template.json", "template", io.template_payload(scenario.template),
        seed=args.seed, digest=digest,
    )
    io.write_document(
        out / "truth.json",
        "truth",
        {
            "hypothesis": None if scenario.true_hypothesis.is_absent else scenario.true_hypothesis.mass,
            "mu": scenario.true_mu,
            "psi": scenario.true_psi,
            "mean_coeffs": scenario.gp_prior.mean_coeffs,
        },
        seed=args.seed,
        digest=digest,
    )
    if not args.no_figures:
        plots.save_spectrum_figure(out / "spectrum.png", scenario.spectrum, signal_mass)
    print(f"wrote spectrum ({scenario.spectrum.n_bins} bins, "
          f"{int(scenario.spectrum.counts.sum())} events) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _load_spectrum(args, config) -> model.BinnedSpectrum:
    if args.events:
        masses = io.read_event_list(args.events)
        scenario = config["scenario"]
        lo, hi = scenario["window"]
        edges = np.linspace(lo, hi, int(scenario["n_bins"]) + 1)
        inside = (masses >= lo) & (masses <= hi)
        counts, _ = np.histogram(masses[inside], bins=edges)
        return model.BinnedSpectrum(edges=edges, counts=counts)
    if not args.spectrum:
        raise ValueError("fit needs --spectrum or --events")
    return io.read_spectrum(args.spectrum)


def cmd_fit(args) -> int:
    config = load_config(args.config)
    digest = io.config_digest(config)
    out = _outdir(args)
    spectrum = _load_spectrum(args, config)
    template = io.read_template(args.template)
    gp_prior = _gp_prior(config)
    mass_prior = model.MassPrior(config["priors"]["p_absent"], spectrum.window)
    smc_cfg = config["smc"]
    free_mu = bool(args.free_mu or smc_cfg["free_mu"])
    mu_prior = (
        model.LogNormalPrior(*config["priors"]["mu_lognormal"]) if free_mu else None
    )
    schedule = smc.TemperatureSchedule.uniform(int(smc_cfg["n_temperatures"]))

    trace_path = out / "trace.jsonl"
    trace_file = open(trace_path, "w", encoding="utf-8") if args.trace else None
    window = spectrum.window
    temperature_kdes = []

    def on_temperature(record, ensemble):
        if trace_file is not None:
            trace_file.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")
            trace_file.flush()
        if not args.no_figures:
            summ = smc.posterior_summary(ensemble, window=window, grid_size=321)
            temperature_kdes.append((summ.kde_grid, summ.kde_density))

    try:
        result = smc.run_smc(
            spectrum,
            template,
            gp_prior,
            mass_prior,
            schedule=schedule,
            n_particles=int(smc_cfg["n_particles"]),
            moves_per_temp=int(smc_cfg["moves_per_temp"]),
            seed=args.seed,
            mu_prior=mu_prior,
            move_config=smc.MoveConfig(
                hyper_step=smc_cfg["hyper_step"], mu_step=smc_cfg["mu_step"]
            ),
            on_temperature=on_temperature,
        )
    finally:
        if trace_file is not None:
            trace_file.close()

    ensemble = result.ensemble
    summary = smc.posterior_summary(ensemble, window=window, include_mu=free_mu)
    eta_map, sigma2_map = smc.map_hyperparameters(ensemble)

    payload = {
        "p_absent_hat": summary.p_absent_hat,
        "p_absent_upper90": summary.p_absent_upper90,
        "map_mass": None if summary.map_mass.is_absent else summary.map_mass.mass,
        "mu_quantiles": summary.mu_quantiles,
        "eta_map": eta_map,
        "sigma2_map": sigma2_map,
        "window": list(window),
        "free_mu": free_mu,
        "p_absent_prior": mass_prior.p_absent,
        "kde_grid": summary.kde_grid,
        "kde_density": summary.kde_density,
        "trace": [r.as_dict() for r in result.trace],
        "ensemble": {
            "etas": ensemble.etas,
            "sigma2s": ensemble.sigma2s,
            "psis": ensemble.psis,
            "masses": ensemble.masses,
            "mus": ensemble.mus,
            "weights": ensemble.normalized_weights,
        },
        "edges": spectrum.edges,
        "counts": spectrum.counts,
        "template": io.template_payload(template),
        "mean_coeffs": gp_prior.mean_coeffs,
    }
    if free_mu:
        present = ~ensemble.absent
        masses = ensemble.masses[present]
        mus = ensemble.mus[present]
        weights = ensemble.normalized_weights[present]
        mode, box = _joint_mode_box(masses, mus, weights)
        payload["joint_mode"] = {"mass": mode[0], "mu": mode[1]}
        payload["joint_box68"] = {
            "mass": [box[0][0], box[0][1]],
            "mu": [box[1][0], box[1][1]],
        }
        io.write_csv(out / "joint_mu.csv", ["mass", "mu", "weight"], [masses, mus, weights])
        if not args.no_figures:
            plots.save_joint_mu_figure(out / "joint_mu.png", masses, mus, mode=mode, box=box)

    io.write_document(out / "posterior.json", "posterior", payload, seed=args.seed, digest=digest)
    io.write_csv(out / "mass_kde.csv", ["mass", "density"], [summary.kde_grid, summary.kde_density])
    if not args.no_figures:
        plots.save_mass_posterior_figure(
            out / "mass_posterior.png",
            summary.kde_grid,
            summary.kde_density,
            map_mass=None if summary.map_mass.is_absent else summary.map_mass.mass,
            temperature_kdes=temperature_kdes[:-1],
        )
        w = ensemble.normalized_weights
        psi_mean = w @ ensemble.psis
        signal_curve = None
        if not summary.map_mass.is_absent:
            mu_mode = float(np.median(ensemble.mus)) if free_mu else 1.0
            signal_curve = mu_mode * model.signal_bin_integrals(
                summary.map_mass, template, spectrum.edges
            )
        plots.save_spectrum_fit_figure(out / "spectrum_fit.png", spectrum, psi_mean, signal_curve)

    print(
        f"fit: p_absent_hat={summary.p_absent_hat:.6g} "
        f"(90% upper bound {summary.p_absent_upper90:.4g}), "
        f"map_mass={'absent' if summary.map_mass.is_absent else f'{summary.map_mass.mass:.2f} GeV'}"
    )
    return EXIT_OK


def _joint_mode_box(masses, mus, weights):
    """KDE argmax over the joint sample and the box holding the top 68%."""
    from scipy.stats import gaussian_kde

    pts = np.vstack([masses, mus])
    kde = gaussian_kde(pts, weights=weights)
    dens = kde(pts)
    mode_idx = int(np.argmax(dens))
    order = np.argsort(dens)[::-1]
    cum = np.cumsum(weights[order] / weights.sum())
    keep = order[: int(np.searchsorted(cum, 0.68)) + 1]
    box = (
        (float(masses[keep].min()), float(masses[keep].max())),
        (float(mus[keep].min()), float(mus[keep].max())),
    )
    return (float(masses[mode_idx]), float(mus[mode_idx])), box


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def _ensemble_from_posterior(doc) -> smc.ParticleEnsemble:
    ens = doc["ensemble"]

    def arr(key, dtype=float):
        return np.asarray(
            [np.nan if v is None else v for v in ens[key]]
            if key == "masses"
            else ens[key],
            dtype=dtype,
        )

    return smc.ParticleEnsemble(
        etas=arr("etas"),
        sigma2s=arr("sigma2s"),
        psis=np.asarray(ens["psis"], dtype=float),
        masses=arr("masses"),
        mus=arr("mus"),
        normalized_weights=arr("weights"),
        rng_seed_record=int(doc.get("seed") or 0),
    )


def cmd_calibrate(args) -> int:
    config = load_config(args.config)
    digest = io.config_digest(config)
    out = _outdir(args)
    doc = io.read_document(args.posterior, "posterior")
    ensemble = _ensemble_from_posterior(doc)
    edges = np.asarray(doc["edges"], dtype=float)
    template = model.SignalTemplate(
        anchor_masses=np.asarray(doc["template"]["anchor_masses"], dtype=float),
        anchor_scales=np.asarray(doc["template"]["anchor_scales"], dtype=float),
        anchor_widths=np.asarray(doc["template"]["anchor_widths"], dtype=float),
    )
    gp_prior = _gp_prior(config)
    lo, hi = float(edges[0]), float(edges[-1])
    mass_prior = model.MassPrior(config["priors"]["p_absent"], (lo, hi))
    lap_cfg = laplace.LaplaceConfig(
        eta=float(doc["eta_map"]),
        sigma2=float(doc["sigma2_map"]),
        tol=config["laplace"]["tol"],
        max_iter=int(config["laplace"]["max_iter"]),
    )
    cal_cfg = config["calibration"]

    discovery = calibrate.calibrate_discovery(
        alpha1=cal_cfg["alpha1"],
        background_posterior=ensemble,
        template=template,
        gp_prior=gp_prior,
        mass_prior=mass_prior,
        spectrum_edges=edges,
        laplace_config=lap_cfg,
        n_mc=int(cal_cfg["n_mc_discovery"]),
        seed=args.seed,
        threads=args.threads,
    )
    coarse = cal_cfg["exclusion_coarse_masses"]
    if coarse is None:
        spacing = cal_cfg["coarse_spacing"]
        coarse = np.arange(lo + 2 * spacing, hi - 2 * spacing + spacing / 2, spacing)
    exclusion = calibrate.calibrate_exclusion(
        alpha2=cal_cfg["alpha2"],
        coarse_grid=np.asarray(coarse, dtype=float),
        background_posterior=ensemble,
        template=template,
        gp_prior=gp_prior,
        mass_prior=mass_prior,
        spectrum_edges=edges,
        laplace_config=lap_cfg,
        n_mc=int(cal_cfg["n_mc_exclusion"]),
        seed=args.seed + 1,
        bandwidth=cal_cfg["smoothing_bandwidth"],
        fine_spacing=config["laplace"]["grid_spacing"],
        threads=args.threads,
    )

    payload = {
        "q_absent": discovery.q_absent,
        "alpha1": discovery.alpha1,
        "mc_stderr": discovery.mc_stderr,
        "n_mc_discovery": discovery.n_samples,
        "alpha2": exclusion.alpha2,
        "n_mc_exclusion": exclusion.n_samples,
        "exclusion_grid": exclusion.exclusion_grid,
        "exclusion_thresholds": exclusion.exclusion_thresholds,
        "exclusion_coarse_grid": exclusion.exclusion_coarse_grid,
        "exclusion_coarse_thresholds": exclusion.exclusion_coarse_thresholds,
        "smoothing_bandwidth": exclusion.smoothing_bandwidth,
        "eta_map": doc["eta_map"],
        "sigma2_map": doc["sigma2_map"],
        "window": [lo, hi],
        "seeds": {"discovery": args.seed, "exclusion": args.seed + 1},
    }
    io.write_document(out / "calibration.json", "calibration", payload, seed=args.seed, digest=digest)
    io.write_csv(
        out / "exclusion_thresholds.csv",
        ["mass", "threshold"],
        [exclusion.exclusion_grid, exclusion.exclusion_thresholds],
    )
    if not args.no_figures:
        plots.save_threshold_figure(
            out / "exclusion_thresholds.png",
            exclusion.exclusion_grid,
            exclusion.exclusion_thresholds,
            exclusion.exclusion_coarse_grid,
            exclusion.exclusion_coarse_thresholds,
        )
    print(
        f"calibrate: q_absent={discovery.q_absent:.6g} at alpha1={discovery.alpha1:g} "
        f"(stderr {discovery.mc_stderr:.3g}); exclusion thresholds on "
        f"{exclusion.exclusion_grid.size} masses at alpha2={exclusion.alpha2:g}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# decide
# ---------------------------------------------------------------------------


def cmd_decide(args) -> int:
    config = load_config(args.config)
    digest = io.config_digest(config)
    out = _outdir(args)
    post_doc = io.read_document(args.posterior, "posterior")
    cal_doc = io.read_document(args.calibration, "calibration")

    grid = np.asarray(post_doc["kde_grid"], dtype=float)
    density = np.asarray(post_doc["kde_density"], dtype=float)
    posterior = laplace.MassPosterior(
        p_absent=float(post_doc["p_absent_hat"]), grid=grid, density=density
    )
    thr_grid = np.asarray(cal_doc["exclusion_grid"], dtype=float)
    thr_vals = np.asarray(cal_doc["exclusion_thresholds"], dtype=float)
    threshold_curve = lambda m: float(np.interp(m, thr_grid, thr_vals))
    spec = decision.LossSpec.from_thresholds(threshold_curve, float(cal_doc["q_absent"]))

    decision_set = decision.bayes_rule(posterior, spec)
    level = config["decision"]["credible_level"]
    credible = (
        decision.credible_interval(posterior, level)
        if posterior.p_absent < 1.0
        else None
    )

    payload = {
        "intervals": [list(iv) for iv in decision_set.intervals],
        "includes_absent": decision_set.includes_absent,
        "credible_level": level,
        "credible_interval": list(credible) if credible is not None else None,
        "q_absent": cal_doc["q_absent"],
        "p_absent_hat": posterior.p_absent,
    }
    io.write_document(out / "decision.json", "decision", payload, seed=args.seed, digest=digest)
    thresholds_on_grid = np.interp(grid, thr_grid, thr_vals)
    io.write_csv(
        out / "decision_table.csv",
        ["mass", "posterior_density", "threshold"],
        [grid, density, thresholds_on_grid],
    )
    if not args.no_figures:
        plots.save_decision_figure(
            out / "decision.png",
            grid,
            density,
            thresholds_on_grid,
            decision_set.intervals,
            credible=credible,
            includes_absent=decision_set.includes_absent,
        )
    intervals_text = (
        ", ".join(f"({lo:.2f}, {hi:.2f})" for lo, hi in decision_set.intervals) or "none"
    )
    print(
        f"decide: intervals {intervals_text}; no-signal retained: "
        f"{decision_set.includes_absent}; {int(level * 100)}% credible interval "
        f"{tuple(round(c, 3) for c in credible) if credible else 'undefined'}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# gv-baseline
# ---------------------------------------------------------------------------


def cmd_gv_baseline(args) -> int:
    config = load_config(args.config)
    digest = io.config_digest(config)
    out = _outdir(args)
    gv = config["gv"]
    from scipy.stats import chi2

    grid_size = int(gv["grid_size"])
    corr = float(gv["correlation_length"])
    dof = int(gv["dof"])
    grid = np.linspace(0.0, 1.0, grid_size)
    cov = model.covariance_matrix(grid, eta=1.0 / (2.0 * corr * corr), sigma2=1.0, jitter=1e-10)
    chol = np.linalg.cholesky(cov)

    def scan(rng):
        z = chol @ rng.standard_normal((grid_size, dof))
        return np.sum(z * z, axis=1)

    kappa = (
        float(gv["observed_max"])
        if gv["observed_max"] is not None
        else float(chi2.isf(gv["local_alpha"], dof))
    )
    result = calibrate.gross_vitells_global_p(
        observed_max=kappa,
        dof=dof,
        n_null_sims=int(gv["n_null_sims"]),
        local_stat_scan=scan,
        seed=args.seed,
    )
    payload = {
        "observed_max": kappa,
        "dof": dof,
        "grid_size": grid_size,
        "correlation_length": corr,
        **result,
    }
    io.write_document(out / "gv.json", "gv", payload, seed=args.seed, digest=digest)
    if not args.no_figures:
        example_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=args.seed, spawn_key=(99,)))
        )
        plots.save_gv_figure(out / "gv_scan.png", grid, scan(example_rng), kappa)
    print(
        f"gv-baseline: local p={result['local_p']:.4g}, global p={result['global_p']:.4g} "
        f"(mean upcrossings {result['mean_upcrossings']:.3f})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bumpbayes",
        description="Bayesian bump search with calibrated decision sets",
    )
    parser.add_argument("--version", action="version", version=f"bumpbayes {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config overriding the documented defaults")
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo loops")
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p_sim = sub.add_parser("simulate", help="generate a pseudo-experiment")
    common(p_sim)
    p_sim.add_argument("--no-signal", action="store_true", help="background-only truth")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="run the SMC sampler on a spectrum")
    common(p_fit)
    p_fit.add_argument("--spectrum", help="spectrum JSON document")
    p_fit.add_argument("--events", help="event list, one mass per line")
    p_fit.add_argument("--template", required=True, help="signal template JSON document")
    p_fit.add_argument("--trace", action="store_true", help="write per-temperature trace.jsonl")
    p_fit.add_argument("--free-mu", action="store_true", help="treat the cross-section scale as free")
    p_fit.set_defaults(func=cmd_fit)

    p_cal = sub.add_parser("calibrate", help="calibrate discovery and exclusion thresholds")
    common(p_cal)
    p_cal.add_argument("--posterior", required=True, help="posterior JSON from fit")
    p_cal.set_defaults(func=cmd_calibrate)

    p_dec = sub.add_parser("decide", help="produce the decision set report")
    common(p_dec)
    p_dec.add_argument("--posterior", required=True, help="posterior JSON from fit")
    p_dec.add_argument("--calibration", required=True, help="calibration JSON")
    p_dec.set_defaults(func=cmd_decide)

    p_gv = sub.add_parser("gv-baseline", help="look-elsewhere baseline on a toy scan")
    common(p_gv)
    p_gv.set_defaults(func=cmd_gv_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InsufficientSamplesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SAMPLES
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
