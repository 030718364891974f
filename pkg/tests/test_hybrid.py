"""Exponential-family boosting tests with finite-difference oracles."""

import math
import random

import numpy as np
import pytest

from relboost.hybrid import (
    Gaussian,
    HybridConfig,
    Multinomial,
    Poisson,
    aggregate_trajectories,
    gaussian_gradients,
    gaussian_ll,
    kind_for,
    mixed_gaussian_mean,
    mixed_poisson_rate,
    mixed_softmax_prob,
    multinomial_gradient,
    multinomial_ll,
    multinomial_prob,
    parse_hybrid,
    poisson_gradient,
    poisson_ll,
    serialize_hybrid,
    train_hybrid,
    train_mixed,
)
from relboost.logic import (
    Atom,
    Constant,
    ExampleSet,
    FactBase,
    parse_facts,
    parse_modes,
    parse_schema,
)


class TestMultinomialProb:
    def test_uniform_for_equal_scores(self):
        assert multinomial_prob([1.3] * 4) == pytest.approx([0.25] * 4)

    def test_reference_values(self):
        assert multinomial_prob([math.log(2.0), 0.0]) == pytest.approx(
            [2.0 / 3.0, 1.0 / 3.0])

    def test_shift_invariance(self):
        base = multinomial_prob([0.3, -1.2, 2.0])
        shifted = multinomial_prob([5.3, 3.8, 7.0])
        assert shifted == pytest.approx(base, abs=1e-12)

    def test_probability_vector(self):
        rng = random.Random(8)
        for _ in range(200):
            # spreads beyond ~36 saturate float64, so stay inside
            psis = [rng.uniform(-15, 15) for _ in range(rng.randint(2, 6))]
            probs = multinomial_prob(psis)
            assert all(0.0 < p < 1.0 for p in probs)
            assert sum(probs) == pytest.approx(1.0, abs=1e-12)


class TestMultinomialGradient:
    def test_perfect_fit_is_zero(self):
        assert multinomial_gradient(0, [1.0, 0.0]) == pytest.approx([0.0, 0.0])

    def test_uniform_four_way(self):
        assert multinomial_gradient(0, [0.25] * 4) == pytest.approx(
            [0.75, -0.25, -0.25, -0.25])

    def test_components_sum_to_zero_exactly(self):
        rng = random.Random(9)
        for _ in range(200):
            probs = multinomial_prob([rng.uniform(-4, 4) for _ in range(4)])
            grad = multinomial_gradient(rng.randint(0, 3), probs)
            assert math.fsum(grad) == pytest.approx(0.0, abs=1e-15)


class TestPoisson:
    def test_gradient_fixpoint(self):
        assert poisson_gradient(3, math.log(3.0)) == pytest.approx(0.0)

    def test_gradient_at_unit_rate(self):
        assert poisson_gradient(2, 0.0) == pytest.approx(1.0)

    def test_gradient_negative(self):
        assert poisson_gradient(0, math.log(2.0)) == pytest.approx(-2.0)

    def test_ll_values(self):
        assert poisson_ll(0, 0.0) == pytest.approx(-1.0)
        assert poisson_ll(1, 0.0) == pytest.approx(-1.0)

    def test_gradient_is_ll_derivative(self):
        rng = random.Random(10)
        h = 1e-6
        for _ in range(300):
            y = rng.randint(0, 12)
            psi = rng.uniform(-2.0, 2.5)
            fd = (poisson_ll(y, psi + h) - poisson_ll(y, psi - h)) / (2 * h)
            assert poisson_gradient(y, psi) == pytest.approx(fd, rel=1e-6, abs=1e-8)


class TestGaussianGradients:
    def test_at_the_mean(self):
        dmu, dsigma = gaussian_gradients(2.0, 2.0, 0.5)
        assert dmu == 0.0
        assert dsigma == pytest.approx(-2.0)

    def test_one_sigma_residual_stations_sigma(self):
        dmu, dsigma = gaussian_gradients(3.0, 2.0, 1.0)
        assert dsigma == pytest.approx(0.0)

    def test_matches_finite_differences(self):
        rng = random.Random(12)
        h = 1e-6
        for _ in range(300):
            y = rng.uniform(-3, 3)
            mu = rng.uniform(-3, 3)
            sigma = rng.uniform(0.3, 3.0)
            dmu, dsigma = gaussian_gradients(y, mu, sigma)
            fd_mu = (gaussian_ll(y, mu + h, sigma)
                     - gaussian_ll(y, mu - h, sigma)) / (2 * h)
            fd_sigma = (gaussian_ll(y, mu, sigma + h)
                        - gaussian_ll(y, mu, sigma - h)) / (2 * h)
            assert dmu == pytest.approx(fd_mu, rel=1e-6, abs=1e-6)
            assert dsigma == pytest.approx(fd_sigma, rel=1e-6, abs=1e-6)

    def test_sigma_floor_enforced(self):
        with pytest.raises(ValueError, match="floor"):
            gaussian_gradients(1.0, 0.0, 1e-6)


class TestMixedFormulas:
    def test_softmax_reduces_to_multinomial_at_zero_x(self):
        intercepts = [0.4, -0.3, 1.1]
        coeffs = [[0.5], [0.1], [-0.2]]
        base = multinomial_prob(intercepts)
        for k in range(3):
            assert mixed_softmax_prob(intercepts, coeffs, [0.0], k) == \
                pytest.approx(base[k])

    def test_softmax_two_class_scores(self):
        got = mixed_softmax_prob([math.log(2.0), 0.0], [[], []], [], 0)
        assert got == pytest.approx(2.0 / 3.0)

    def test_softmax_shift_invariance(self):
        a = mixed_softmax_prob([0.2, 0.9], [[1.0], [-1.0]], [0.7], 0)
        b = mixed_softmax_prob([5.2, 5.9], [[1.0], [-1.0]], [0.7], 0)
        assert a == pytest.approx(b, abs=1e-12)

    def test_softmax_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mixed_softmax_prob([0.0, 0.0], [[1.0], [1.0, 2.0]], [0.5], 0)

    def test_poisson_rate_at_zero_x(self):
        assert mixed_poisson_rate(0.7, [1.0, -2.0], [0.0, 0.0]) == \
            pytest.approx(math.exp(0.7))

    def test_poisson_rate_single_parent(self):
        assert mixed_poisson_rate(0.0, [math.log(2.0)], [1.0]) == pytest.approx(2.0)

    def test_poisson_rate_all_zero(self):
        assert mixed_poisson_rate(0.0, [], []) == 1.0

    def test_gaussian_mean_intercept_only(self):
        assert mixed_gaussian_mean(1.4, [2.0], [0.0]) == pytest.approx(1.4)

    def test_gaussian_mean_dot_product(self):
        coeffs = [0.5, -1.5]
        xs = [2.0, 3.0]
        want = 0.25 + sum(c * x for c, x in zip(coeffs, xs))
        assert mixed_gaussian_mean(0.25, coeffs, xs) == pytest.approx(want)

    def test_gaussian_mean_zero_coeffs(self):
        assert mixed_gaussian_mean(0.9, [0.0, 0.0], [5.0, -3.0]) == \
            pytest.approx(0.9)


@pytest.fixture(scope="module")
def branch_domain():
    schema = parse_schema("""
predicate: sick/1 boolean.
predicate: visits/1 count.
predicate: weight/1 continuous.
predicate: grade/1 multiclass(3).
""")
    modes = parse_modes("mode: sick(+).", schema)
    rng = np.random.default_rng(2024)
    n = 2500
    facts, sick_flags = [], []
    for i in range(n):
        sick = bool(rng.random() < 0.4)
        sick_flags.append(sick)
        if sick:
            facts.append(Atom(schema.get("sick"), (Constant(f"e{i:05d}"),), True))
    db = FactBase(schema, facts)
    return schema, db, modes, rng, sick_flags, n


class TestTrainHybrid:
    def test_constant_rate_poisson_recovery(self, branch_domain):
        # no informative parents: the fixpoint of the boosted log rate is
        # the maximum-likelihood rate, the plain mean of the counts
        schema, db, modes, rng, _, n = branch_domain
        target = schema.get("visits")
        rng2 = np.random.default_rng(7)
        entries = [(Atom(target, (Constant(f"e{i:05d}"),)), int(y))
                   for i, y in enumerate(rng2.poisson(4.0, 2000))]
        examples = ExampleSet(target, entries)
        config = HybridConfig(iterations=40, eta_poisson=0.25, rng_seed=0)
        model = train_hybrid({"visits": examples}, db, [], config)["visits"]
        mean = sum(v for _, v in entries) / len(entries)
        rate = model.rate(entries[0][0], db)
        assert abs(rate - 4.0) / 4.0 < 0.05
        assert rate == pytest.approx(mean, rel=1e-6)

    def test_poisson_iid_convergence_spec_settings(self, branch_domain):
        schema, db, modes, _, _, _ = branch_domain
        target = schema.get("visits")
        rng2 = np.random.default_rng(8)
        entries = [(Atom(target, (Constant(f"e{i:05d}"),)), int(y))
                   for i, y in enumerate(rng2.poisson(1.5, 1200))]
        examples = ExampleSet(target, entries)
        config = HybridConfig(iterations=50, eta_poisson=0.5, rng_seed=0)
        model = train_hybrid({"visits": examples}, db, [], config)["visits"]
        mean = sum(v for _, v in entries) / len(entries)
        rate = model.rate(entries[0][0], db)
        assert abs(rate - mean) / mean <= 1e-3

    def test_gaussian_branch_means(self, branch_domain):
        schema, db, modes, rng, sick_flags, n = branch_domain
        target = schema.get("weight")
        rng2 = np.random.default_rng(9)
        entries = []
        for i in range(n):
            mu = 4.0 if sick_flags[i] else 1.0
            entries.append((Atom(target, (Constant(f"e{i:05d}"),)),
                            float(rng2.normal(mu, 1.0))))
        examples = ExampleSet(target, entries)
        model = train_hybrid({"weight": examples}, db, modes,
                             HybridConfig(iterations=25, rng_seed=0))["weight"]
        for branch in (True, False):
            members = [(a, v) for (a, v), s in zip(entries, sick_flags) if s == branch]
            sample_mean = sum(v for _, v in members) / len(members)
            mu, sigma = model.mu_sigma(members[0][0], db)
            assert abs(mu - sample_mean) < 0.05
            assert 0.8 < sigma < 1.2

    def test_multinomial_frequency_recovery(self, branch_domain):
        schema, db, modes, _, _, _ = branch_domain
        target = schema.get("grade")
        rng2 = np.random.default_rng(10)
        entries = [(Atom(target, (Constant(f"e{i:05d}"),)), int(k))
                   for i, k in enumerate(rng2.choice(3, size=1500,
                                                     p=[0.5, 0.3, 0.2]))]
        examples = ExampleSet(target, entries)
        model = train_hybrid({"grade": examples}, db, modes,
                             HybridConfig(iterations=30, rng_seed=0))["grade"]
        freq = [sum(1 for _, v in entries if v == k) / len(entries)
                for k in range(3)]
        probs = model.class_probs(entries[0][0], db)
        assert max(abs(f - p) for f, p in zip(freq, probs)) < 0.02

    def test_value_kind_dispatch(self, branch_domain):
        schema = branch_domain[0]
        assert kind_for(schema.get("grade")) == Multinomial(3)
        assert kind_for(schema.get("visits")) == Poisson()
        assert kind_for(schema.get("weight")) == Gaussian()
        with pytest.raises(ValueError):
            kind_for(schema.get("sick"))

    def test_empty_target_set_rejected(self, branch_domain):
        schema, db, modes, _, _, _ = branch_domain
        empty = ExampleSet(schema.get("visits"), [])
        with pytest.raises(ValueError, match="no examples"):
            train_hybrid({"visits": empty}, db, modes, HybridConfig())


class TestHybridModelFiles:
    def test_poisson_roundtrip(self, branch_domain):
        schema, db, modes, _, _, _ = branch_domain
        target = schema.get("visits")
        rng2 = np.random.default_rng(11)
        entries = [(Atom(target, (Constant(f"e{i:05d}"),)), int(y))
                   for i, y in enumerate(rng2.poisson(2.0, 200))]
        model = train_hybrid({"visits": ExampleSet(target, entries)}, db, modes,
                             HybridConfig(iterations=5, rng_seed=0))["visits"]
        text = serialize_hybrid(model)
        again = parse_hybrid(text, schema)
        assert serialize_hybrid(again) == text
        assert again.rate(entries[0][0], db) == model.rate(entries[0][0], db)

    def test_gaussian_roundtrip_keeps_sigma0(self, branch_domain):
        schema, db, modes, _, sick_flags, n = branch_domain
        target = schema.get("weight")
        rng2 = np.random.default_rng(12)
        entries = [(Atom(target, (Constant(f"e{i:05d}"),)), float(rng2.normal(0, 2)))
                   for i in range(150)]
        model = train_hybrid({"weight": ExampleSet(target, entries)}, db, modes,
                             HybridConfig(iterations=4, sigma0=1.5))["weight"]
        again = parse_hybrid(serialize_hybrid(model), schema)
        assert again.sigma0 == 1.5
        assert again.mu_sigma(entries[0][0], db) == model.mu_sigma(entries[0][0], db)


class TestMixedParentModel:
    def test_gaussian_coefficient_recovery(self):
        # y = 1 + 2 x for plain entities, y = -1 - x for marked ones
        schema = parse_schema("""
predicate: marked/1 boolean.
predicate: x/1 continuous.
predicate: y/1 continuous.
""")
        modes = parse_modes("mode: marked(+).", schema)
        rng = np.random.default_rng(31)
        facts, entries = [], []
        target = schema.get("y")
        for i in range(800):
            e = Constant(f"e{i:04d}")
            marked = i % 2 == 0
            if marked:
                facts.append(Atom(schema.get("marked"), (e,), True))
            x = float(rng.uniform(-2, 2))
            facts.append(Atom(schema.get("x"), (e,), x))
            mu = (-1.0 - x) if marked else (1.0 + 2.0 * x)
            entries.append((Atom(target, (e,)), float(rng.normal(mu, 1.0))))
        db = FactBase(schema, facts)
        # eta below 2 sigma^2 / E[x^2] keeps the coefficient recursion stable
        model = train_mixed(ExampleSet(target, entries), db, modes, ["x"],
                            HybridConfig(iterations=40, eta_mu=0.5, rng_seed=0))
        for marked, (b0, b1) in ((True, (-1.0, -1.0)), (False, (1.0, 2.0))):
            sample = next(a for (a, _), m in zip(
                entries, [i % 2 == 0 for i in range(800)]) if m == marked)
            mu, sigma = model.predict(sample, db)
            x = model.parent_values(sample, db)[0]
            assert mu == pytest.approx(b0 + b1 * x, abs=0.25)

    def test_poisson_log_linear_recovery(self):
        schema = parse_schema("""
predicate: x/1 continuous.
predicate: hits/1 count.
""")
        modes = parse_modes("", schema)
        rng = np.random.default_rng(33)
        facts, entries = [], []
        target = schema.get("hits")
        for i in range(1500):
            e = Constant(f"e{i:04d}")
            x = float(rng.uniform(-1, 1))
            facts.append(Atom(schema.get("x"), (e,), x))
            lam = math.exp(0.5 + 0.8 * x)
            entries.append((Atom(target, (e,)), int(rng.poisson(lam))))
        db = FactBase(schema, facts)
        model = train_mixed(ExampleSet(target, entries), db, modes, ["x"],
                            HybridConfig(iterations=30, eta_poisson=0.3, rng_seed=0))
        for x_probe in (-0.8, 0.0, 0.8):
            probe = min(entries, key=lambda ev: abs(
                model.parent_values(ev[0], db)[0] - x_probe))[0]
            x = model.parent_values(probe, db)[0]
            assert model.predict(probe, db) == pytest.approx(
                math.exp(0.5 + 0.8 * x), rel=0.15)

    def test_missing_parent_fact_rejected(self):
        schema = parse_schema("""
predicate: x/1 continuous.
predicate: y/1 continuous.
""")
        db = FactBase(schema, [])
        target = schema.get("y")
        examples = ExampleSet(target, [(Atom(target, (Constant("a"),)), 1.0)])
        with pytest.raises(ValueError, match="no x fact"):
            train_mixed(examples, db, parse_modes("", schema), ["x"],
                        HybridConfig(iterations=1))


class TestAggregation:
    def _trajectories(self, schema):
        from relboost.rctbn import parse_trajectories
        text = """
traj p1
t=0.0 angio(p1)=false
t=0.0 smoke(p1)=false
t=0.0 bp(p1)=120.0
t=1.0 smoke(p1)=true
t=2.0 bp(p1)=140.0
t=3.0 angio(p1)=true
t=4.0 bp(p1)=160.0
horizon=5.0
traj p2
t=0.0 angio(p2)=false
t=0.0 smoke(p2)=false
t=0.0 bp(p2)=100.0
t=2.5 bp(p2)=90.0
horizon=5.0
"""
        return parse_trajectories(text, schema)

    @pytest.fixture()
    def agg_schema(self):
        return parse_schema("""
predicate: angio/2 boolean temporal.
predicate: smoke/2 boolean temporal.
predicate: bp/2 continuous temporal.
""")

    def test_indicator_and_mean(self, agg_schema):
        trajs = self._trajectories(agg_schema)
        db, examples = aggregate_trajectories(trajs, agg_schema, "angio",
                                              "indicator", "mean")
        values = {a.args[0].symbol: v for a, v in examples.entries}
        assert values == {"p1": 1, "p2": 0}
        assert db.lookup("smoke_ind", (Constant("p1"),)) is True
        assert db.lookup("smoke_ind", (Constant("p2"),)) is None
        # p1's window ends at the first occurrence (t=3): mean of 120, 140
        assert db.lookup("bp_mean", (Constant("p1"),)) == pytest.approx(130.0)
        assert db.lookup("bp_mean", (Constant("p2"),)) == pytest.approx(95.0)

    def test_count_and_extremes(self, agg_schema):
        trajs = self._trajectories(agg_schema)
        db, _ = aggregate_trajectories(trajs, agg_schema, "angio", "count", "max")
        assert db.lookup("smoke_cnt", (Constant("p1"),)) == 1
        assert db.lookup("smoke_cnt", (Constant("p2"),)) == 0
        assert db.lookup("bp_max", (Constant("p1"),)) == pytest.approx(140.0)
        db, _ = aggregate_trajectories(trajs, agg_schema, "angio", "count", "latest")
        assert db.lookup("bp_latest", (Constant("p1"),)) == pytest.approx(140.0)
        db, _ = aggregate_trajectories(trajs, agg_schema, "angio", "count", "min")
        assert db.lookup("bp_min", (Constant("p2"),)) == pytest.approx(90.0)

    def test_bad_aggregator_rejected(self, agg_schema):
        with pytest.raises(ValueError):
            aggregate_trajectories([], agg_schema, "angio", "sum", "mean")
