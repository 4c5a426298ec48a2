"""Decision-theory tests: loss, Bayes risk, optimality of the Bayes rule."""

import math

import numpy as np
import pytest

from bumpbayes import decision
from bumpbayes.laplace import MassPosterior
from bumpbayes.model import Absent, MassHypothesis

WINDOW = (100.0, 180.0)
GRID = np.linspace(100.0, 180.0, 321)  # 0.25 GeV cells


def flat_posterior(p_absent=0.5):
    density = np.full(GRID.size, (1.0 - p_absent) / 80.0)
    return MassPosterior(p_absent=p_absent, grid=GRID, density=density)


def bumpy_posterior(rng, p_absent=None):
    """Random mixture of Gaussian bumps over a uniform floor."""
    if p_absent is None:
        p_absent = float(rng.uniform(0.05, 0.9))
    density = np.full(GRID.size, 0.1)
    for _ in range(rng.integers(1, 4)):
        center = rng.uniform(110, 170)
        width = rng.uniform(0.8, 6.0)
        density = density + rng.uniform(0.5, 30.0) * np.exp(
            -0.5 * ((GRID - center) / width) ** 2
        )
    density *= (1.0 - p_absent) / np.trapezoid(density, GRID)
    return MassPosterior(p_absent=p_absent, grid=GRID, density=density)


def smooth_tabulated(rng, low, high, length_scale=6.0):
    """Positive tabulated curve, smooth at the grid-cell scale."""
    values = np.full(GRID.size, rng.uniform(low, high))
    for _ in range(rng.integers(1, 4)):
        center = rng.uniform(105, 175)
        values = values + rng.uniform(0, high - low) * np.exp(
            -0.5 * ((GRID - center) / length_scale) ** 2
        )
    values = np.clip(values, low, None)
    return lambda m, v=values: float(np.interp(m, GRID, v))


def random_loss_spec(rng):
    if rng.random() < 0.5:
        l_curve = float(rng.uniform(0.002, 0.1))
        c_curve = float(rng.uniform(0.5, 3.0))
    else:
        l_curve = smooth_tabulated(rng, 0.002, 0.1)
        c_curve = smooth_tabulated(rng, 0.5, 3.0)
    return decision.LossSpec(
        l_density=l_curve,
        C_exclusion=c_curve,
        l_absent=float(rng.uniform(0.01, 2.0)),
        C_absent=float(rng.uniform(0.5, 3.0)),
    )


# interval-set helpers for perturbation checks ------------------------------


def union(intervals, extra):
    merged = sorted(list(intervals) + [extra])
    out = []
    for lo, hi in merged:
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return tuple((lo, hi) for lo, hi in out if hi > lo)


def difference(intervals, cut):
    clo, chi = cut
    out = []
    for lo, hi in intervals:
        if chi <= lo or clo >= hi:
            out.append((lo, hi))
            continue
        if lo < clo:
            out.append((lo, clo))
        if chi < hi:
            out.append((chi, hi))
    return tuple((lo, hi) for lo, hi in out if hi > lo)


class TestLoss:
    def test_empty_set_absent_truth_pays_exclusion(self):
        spec = decision.LossSpec(1.0, 10.0, l_absent=0.3, C_absent=7.0)
        S = decision.DecisionSet(intervals=(), includes_absent=False)
        assert decision.loss(Absent, S, spec) == pytest.approx(7.0)

    def test_everything_retained_pays_inclusion_only(self):
        spec = decision.LossSpec(1.0, 10.0, l_absent=0.3, C_absent=7.0)
        S = decision.DecisionSet(intervals=((100.0, 180.0),), includes_absent=True)
        value = decision.loss(MassHypothesis.at(125.0), S, spec)
        assert value == pytest.approx(80.0 + 0.3, rel=1e-10)

    def test_constant_losses_interval_case(self):
        spec = decision.LossSpec(1.0, 10.0, l_absent=1.0, C_absent=10.0)
        S = decision.DecisionSet(intervals=((120.0, 130.0),), includes_absent=False)
        assert decision.loss(MassHypothesis.at(125.0), S, spec) == pytest.approx(10.0)

    def test_excluded_truth_pays_its_exclusion_loss(self):
        spec = decision.LossSpec(1.0, lambda m: m / 10.0, l_absent=1.0, C_absent=10.0)
        S = decision.DecisionSet(intervals=((120.0, 130.0),), includes_absent=False)
        value = decision.loss(MassHypothesis.at(150.0), S, spec)
        assert value == pytest.approx(10.0 + 15.0, rel=1e-10)


class TestBayesRisk:
    def test_absent_toggle_identity(self):
        rng = np.random.default_rng(0)
        post = bumpy_posterior(rng, p_absent=0.3)
        spec = decision.LossSpec(0.02, 1.0, l_absent=0.4, C_absent=2.0)
        S = decision.DecisionSet(intervals=((120.0, 128.0),), includes_absent=False)
        with_absent = decision.bayes_risk(S.toggled_absent(), post, spec)
        without = decision.bayes_risk(S, post, spec)
        expected = spec.l_absent * (1.0 - 0.3) - spec.C_absent * 0.3
        assert with_absent - without == pytest.approx(expected, rel=1e-10)

    def test_uniform_posterior_risk_depends_only_on_length(self):
        post = flat_posterior(0.5)
        spec = decision.LossSpec(0.01, 1.0, l_absent=1.0, C_absent=1.0)
        s1 = decision.DecisionSet(intervals=((110.0, 120.0),), includes_absent=False)
        s2 = decision.DecisionSet(intervals=((140.0, 145.0), (160.0, 165.0)), includes_absent=False)
        r1 = decision.bayes_risk(s1, post, spec)
        r2 = decision.bayes_risk(s2, post, spec)
        assert r1 == pytest.approx(r2, rel=1e-9)

    def test_monte_carlo_average_of_loss_matches(self):
        # oracle: sample the posterior, average realized losses
        rng = np.random.default_rng(7)
        post = bumpy_posterior(rng, p_absent=0.35)
        spec = decision.LossSpec(0.03, 1.5, l_absent=0.4, C_absent=2.0)
        S = decision.DecisionSet(intervals=((118.0, 126.0), (150.0, 155.0)), includes_absent=True)

        n = 100_000
        absent_draws = rng.random(n) < post.p_absent
        cdf = np.concatenate(
            [[0.0], np.cumsum(0.5 * (post.density[1:] + post.density[:-1]) * np.diff(post.grid))]
        )
        cdf /= cdf[-1]
        masses = np.interp(rng.random(n), cdf, post.grid)

        # vectorized replica of loss(); validated against loss() on a subsample
        inclusion = float(
            sum(
                decision.loss(Absent, decision.DecisionSet((iv,), False), spec)
                for iv in S.intervals
            )
        ) - spec.C_absent * len(S.intervals)
        in_s = np.zeros(n, dtype=bool)
        for lo, hi in S.intervals:
            in_s |= (masses > lo) & (masses < hi)
        c_vals = np.array([spec.C(m) for m in masses])
        losses = np.full(n, inclusion)
        losses[absent_draws] += 0.0 if S.includes_absent else spec.C_absent
        present = ~absent_draws
        losses[present] += spec.l_absent if S.includes_absent else 0.0
        losses[present & ~in_s] += c_vals[present & ~in_s]

        for idx in rng.choice(n, size=100, replace=False):
            hyp = Absent if absent_draws[idx] else MassHypothesis.at(float(masses[idx]))
            assert decision.loss(hyp, S, spec) == pytest.approx(losses[idx], rel=1e-8)

        mc = float(np.mean(losses))
        se = float(np.std(losses, ddof=1) / math.sqrt(n))
        risk = decision.bayes_risk(S, post, spec)
        assert abs(risk - mc) < 3 * se


class TestBayesRule:
    def test_empty_when_thresholds_dominate(self):
        post = flat_posterior(0.5)
        spec = decision.LossSpec(1.0, 1.0, l_absent=1.0, C_absent=1.0)
        S = decision.bayes_rule(post, spec)
        assert S.intervals == ()
        assert not S.includes_absent  # odds 1 vs threshold 1: tie -> exclude

    def test_absent_boundary_behavior(self):
        post = flat_posterior(0.5)  # odds exactly 1
        just_below = decision.LossSpec(1.0, 1.0, l_absent=0.999, C_absent=1.0)
        just_above = decision.LossSpec(1.0, 1.0, l_absent=1.001, C_absent=1.0)
        assert decision.bayes_rule(post, just_below).includes_absent
        assert not decision.bayes_rule(post, just_above).includes_absent

    def test_degenerate_all_absent(self):
        post = MassPosterior(p_absent=1.0, grid=GRID, density=np.zeros(GRID.size))
        spec = decision.LossSpec(1.0, 1.0, l_absent=5.0, C_absent=1.0)
        S = decision.bayes_rule(post, spec)
        assert S.includes_absent and S.intervals == ()

    def test_calibration_linkage_identity(self):
        # with l/C = q0/(1-q0), keeping the absent state is the same event
        # as p_absent exceeding q0
        rng = np.random.default_rng(5)
        for _ in range(100):
            q0 = float(rng.uniform(0.001, 0.999))
            p_absent = float(rng.uniform(0.001, 0.999))
            if abs(p_absent - q0) < 1e-12:
                continue
            post = flat_posterior(p_absent)
            spec = decision.LossSpec.from_thresholds(lambda m: 1.0, q0)
            S = decision.bayes_rule(post, spec)
            assert S.includes_absent == (p_absent > q0)

    def test_boundaries_satisfy_threshold_equation(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            post = bumpy_posterior(rng)
            spec = random_loss_spec(rng)
            S = decision.bayes_rule(post, spec)
            for lo, hi in S.intervals:
                for b in (lo, hi):
                    if b in (post.grid[0], post.grid[-1]):
                        continue
                    dens = float(np.interp(b, post.grid, post.density))
                    assert abs(dens - spec.ratio(b)) < 1e-4

    def test_interior_of_set_exceeds_threshold(self):
        rng = np.random.default_rng(13)
        post = bumpy_posterior(rng)
        spec = random_loss_spec(rng)
        S = decision.bayes_rule(post, spec)
        for lo, hi in S.intervals:
            mid = 0.5 * (lo + hi)
            assert float(np.interp(mid, post.grid, post.density)) > spec.ratio(mid)


class TestOptimality:
    """Theorem-level checks: no perturbation of the Bayes set lowers risk."""

    def n_posteriors(self):
        return 12  # the acceptance suite runs the full 50

    def test_no_single_or_multi_perturbation_improves(self):
        run_perturbation_battery(
            n_posteriors=self.n_posteriors(), n_multi=2000, seed=101
        )

    def test_risk_consistency_against_reference_sets(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            post = bumpy_posterior(rng)
            spec = random_loss_spec(rng)
            s_star = decision.bayes_rule(post, spec)
            base = decision.bayes_risk(s_star, post, spec)
            lo_ci, hi_ci = decision.credible_interval(post, 0.95)
            references = [
                decision.DecisionSet((), includes_absent=True),
                decision.DecisionSet((), includes_absent=False),
                decision.DecisionSet(((100.0, 180.0),), includes_absent=False),
                decision.DecisionSet(((lo_ci, hi_ci),), includes_absent=False),
            ]
            for ref in references:
                assert base <= decision.bayes_risk(ref, post, spec) + 1e-9


def run_perturbation_battery(n_posteriors, n_multi, seed, deltas=(0.25, 1.0, 5.0)):
    """Exhaustive single and random multi perturbations of the Bayes set.

    Shared by the unit test (small battery) and the acceptance suite
    (full 50-posterior battery with 1e4 multi-perturbations).
    """
    rng = np.random.default_rng(seed)
    tol = 1e-9
    multi_per_posterior = int(math.ceil(n_multi / n_posteriors))
    for _ in range(n_posteriors):
        post = bumpy_posterior(rng)
        spec = random_loss_spec(rng)
        s_star = decision.bayes_rule(post, spec)
        base = decision.bayes_risk(s_star, post, spec)
        scale = max(abs(base), 1.0)

        # absent toggle
        assert decision.bayes_risk(s_star.toggled_absent(), post, spec) >= base - tol * scale

        # exhaustive grid-aligned add/delete of width-delta subintervals
        for delta in deltas:
            starts = np.arange(100.0, 180.0 - delta + 1e-9, 0.25)
            for a in starts:
                cut = (float(a), float(a + delta))
                added = decision.DecisionSet(
                    union(s_star.intervals, cut), s_star.includes_absent
                )
                removed = decision.DecisionSet(
                    difference(s_star.intervals, cut), s_star.includes_absent
                )
                assert decision.bayes_risk(added, post, spec) >= base - tol * scale
                assert decision.bayes_risk(removed, post, spec) >= base - tol * scale

        # random multi-perturbations: compositions of adds/deletes + toggle
        for _ in range(multi_per_posterior):
            intervals = s_star.intervals
            for _ in range(rng.integers(2, 6)):
                delta = float(rng.choice(deltas))
                a = float(rng.choice(np.arange(100.0, 180.0 - delta + 1e-9, 0.25)))
                cut = (a, a + delta)
                if rng.random() < 0.5:
                    intervals = union(intervals, cut)
                else:
                    intervals = difference(intervals, cut)
            includes_absent = (
                not s_star.includes_absent if rng.random() < 0.3 else s_star.includes_absent
            )
            perturbed = decision.DecisionSet(intervals, includes_absent)
            assert decision.bayes_risk(perturbed, post, spec) >= base - tol * scale


class TestCredibleInterval:
    def test_symmetric_density_gives_symmetric_interval(self):
        density = np.exp(-0.5 * ((GRID - 140.0) / 3.0) ** 2)
        density *= 0.7 / np.trapezoid(density, GRID)
        post = MassPosterior(p_absent=0.3, grid=GRID, density=density)
        lo, hi = decision.credible_interval(post, 0.95)
        assert (lo + hi) / 2 == pytest.approx(140.0, abs=0.25)
        assert hi - lo == pytest.approx(2 * 1.96 * 3.0, rel=0.05)

    def test_level_to_one_recovers_window(self):
        rng = np.random.default_rng(2)
        post = bumpy_posterior(rng, p_absent=0.2)
        lo, hi = decision.credible_interval(post, 1.0 - 1e-12)
        assert lo == pytest.approx(100.0, abs=0.5)
        assert hi == pytest.approx(180.0, abs=0.5)

    def test_all_absent_posterior_raises(self):
        post = MassPosterior(p_absent=1.0, grid=GRID, density=np.zeros(GRID.size))
        with pytest.raises(ValueError):
            decision.credible_interval(post, 0.95)

    def test_level_validation(self):
        with pytest.raises(ValueError):
            decision.credible_interval(flat_posterior(), 1.5)


class TestDecisionSetType:
    def test_invariants(self):
        with pytest.raises(ValueError):
            decision.DecisionSet(intervals=((130.0, 120.0),), includes_absent=False)
        with pytest.raises(ValueError):
            decision.DecisionSet(
                intervals=((110.0, 130.0), (120.0, 140.0)), includes_absent=False
            )

    def test_contains_and_length(self):
        S = decision.DecisionSet(intervals=((110.0, 120.0), (130.0, 131.0)), includes_absent=True)
        assert S.contains(115.0) and not S.contains(125.0)
        assert S.total_length == pytest.approx(11.0)
