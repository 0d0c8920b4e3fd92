from fractions import Fraction

import numpy as np
import pytest

from gtr.diagnostics import (
    PreconditionError,
    classical_commutativity,
    ensemble_geometry,
    ensemble_symmetry_study,
    ensemble_closed_form,
    individual_closed_form,
    mc_chain_frequency,
    model_verdict,
    q1_integral,
    q_test,
    reciprocity_residual,
    representability_residual,
    universal_average_study,
)
from gtr.engine import REPLICABILITY_LOCK, Agent, Measurement
from gtr.membranes import Epsilon, Uniform, UniformBand, density_piecewise
from gtr.simplex import band, make_regular_simplex


def unit(angle):
    return np.array([np.cos(angle), np.sin(angle)])


def piece_mass(d, lo, hi):
    # oracle: exact integral of a piecewise-constant density over [lo, hi]
    total = 0.0
    for a, b, m in zip(d.edges[:-1], d.edges[1:], d.masses):
        overlap = max(0.0, min(b, hi) - max(a, lo))
        if b > a:
            total += m * overlap / (b - a)
    return total


def random_density(rng, symmetric=False):
    k = int(rng.integers(1, 5))
    if symmetric:
        half = np.sort(rng.uniform(0.01, 0.99, size=k))
        edges = np.concatenate([[-1.0], -half[::-1], half, [1.0]])
        pieces = len(edges) - 1
        w = rng.uniform(0.1, 1, size=(pieces + 1) // 2)
        w = np.concatenate([w, w[: pieces // 2][::-1]])
    else:
        edges = np.unique(np.concatenate([[-1.0, 1.0], rng.uniform(-1, 1, size=k)]))
        w = rng.uniform(0.1, 1, size=len(edges) - 1)
    return density_piecewise(edges, w / w.sum())


def test_random_symmetric_densities_are_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert random_density(rng, symmetric=True).is_symmetric()


def test_q_decomposition_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        ta, tb, tx = rng.uniform(0, 2 * np.pi, size=3)
        a = Measurement(band(unit(ta)), random_density(rng), label="A")
        b = Measurement(band(unit(tb)), random_density(rng), label="B")
        x = unit(tx) * rng.uniform(0.3, 1.0)
        r = q_test(a, b, x)
        assert r.decomposition_residual < 1e-10
        t = r.components
        # oracle: chained products written out
        q = (t["x->a"] * t["a->-b"] + t["x->-a"] * t["-a->b"]
             - t["x->b"] * t["b->-a"] - t["x->-b"] * t["-b->a"])
        assert abs(r.q - q) < 1e-12


def test_symmetric_pair_q2_zero_and_integral():
    rng = np.random.default_rng(2)
    for _ in range(100):
        theta = rng.uniform(0.05, np.pi - 0.05)
        ra, rb = random_density(rng, True), random_density(rng, True)
        a = Measurement(band(unit(0.0)), ra, label="A")
        b = Measurement(band(unit(theta)), rb, label="B")
        r = q_test(a, b, unit(rng.uniform(0, 2 * np.pi)))
        c = np.cos(theta)
        assert abs(r.q2) < 1e-10
        want = piece_mass(rb, c, 1.0) - piece_mass(ra, c, 1.0)
        assert abs(r.q1 - want) < 1e-10
        assert abs(q1_integral(ra, rb, c) - want) < 1e-12


def test_uniform_pair_q_zero():
    rng = np.random.default_rng(3)
    for _ in range(50):
        ta, tb, tx = rng.uniform(0, 2 * np.pi, size=3)
        a = Measurement(band(unit(ta)), UniformBand())
        b = Measurement(band(unit(tb)), UniformBand())
        r = q_test(a, b, unit(tx))
        assert max(abs(r.q), abs(r.q1), abs(r.q2)) < 1e-10
        assert reciprocity_residual(a, b) < 1e-12


def test_q_monte_carlo_consistent():
    a = Measurement(band(unit(0.0)), Epsilon(0.5), label="A")
    b = Measurement(band(unit(1.1)), Epsilon(0.9), label="B")
    r = q_test(a, b, unit(2.5), trials=100_000, rng=np.random.default_rng(4))
    assert r.method == "monte-carlo"
    assert abs(r.q - r.components["q_exact"]) < 3 * r.sigma
    with pytest.raises(PreconditionError):
        q_test(a, b, unit(2.5), trials=10)


def test_q_needs_two_outcomes():
    m3 = Measurement(make_regular_simplex(3, 2), Uniform())
    with pytest.raises(PreconditionError):
        q_test(m3, m3, np.zeros(2))


def test_mc_chain_frequency():
    a = Measurement(band(unit(0.0)), UniformBand(), label="A")
    b = Measurement(band(unit(0.7)), UniformBand(), label="B")
    x = unit(1.9)
    p = (1 + np.cos(1.9)) / 2 * (1 - np.cos(0.7)) / 2
    f = mc_chain_frequency([(a, 0), (b, 1)], x, 200_000, np.random.default_rng(5))
    assert abs(f - p) < 3 * np.sqrt(p * (1 - p) / 200_000)
    with pytest.raises(PreconditionError):
        mc_chain_frequency([(a, 0)], x, 10, np.random.default_rng(0), Agent(strategy=REPLICABILITY_LOCK))


def test_classical_commutativity_violation():
    theta = np.pi / 4
    a = Measurement(band(unit(0.0)), UniformBand(), label="A")
    b = Measurement(band(unit(theta)), Epsilon(0.5), label="B")
    cc = classical_commutativity(a, b)
    assert cc["P(a->b)"] == 1.0
    assert cc["P(b->a)"] == pytest.approx((1 + np.cos(theta)) / 2, abs=1e-15)
    assert cc["residual"] < 1e-12
    assert reciprocity_residual(a, b) == pytest.approx((1 - np.cos(theta)) / 2)


def test_commutator_nonzero_when_both_uncertain():
    a = Measurement(band(unit(0.0)), Epsilon(0.9), label="A")
    b = Measurement(band(unit(0.6)), UniformBand(), label="B")
    cc = classical_commutativity(a, b)
    # starting in b: P(->b->a) = P(b->a), P(->a->b) = P(b->a) P(a->b)
    want = cc["P(b->a)"] * (1 - cc["P(a->b)"])
    assert cc["commutator"] == pytest.approx(want, abs=1e-12)
    assert cc["verdict"] == "non-Kolmogorovian"


def test_reciprocity_with_equal_nonuniform_densities():
    rng = np.random.default_rng(6)
    for _ in range(20):
        d = random_density(rng)
        a = Measurement(band(unit(0.0)), d)
        b = Measurement(band(unit(rng.uniform(0, np.pi))), d)
        assert reciprocity_residual(a, b) < 1e-12


def test_model_verdict_uniform():
    a = Measurement(band(unit(0.0)), UniformBand())
    b = Measurement(band(unit(0.8)), UniformBand())
    v = model_verdict(a, b, unit(2.0))
    assert v.hilbertian_candidate
    assert v.to_dict()["qq_residual"] < 1e-10


def test_universal_average_rows():
    out = universal_average_study([0.2, 0.4], [4, 8], sampled_n=200, membranes=2000,
                                  rng=np.random.default_rng(7), k3=3, state3=[0.5, 0.3, 0.2])
    exact = [r for r in out["rows"] if r["mode"] == "exact"]
    assert len(exact) == 4
    for r in exact:
        assert Fraction(r["exact"]) == (1 + Fraction(r["cos"])) / 2
    assert out["max_sampled_gap"] < 0.05
    assert out["three_outcome"]["max_gap"] < 0.05
    with pytest.raises(PreconditionError):
        universal_average_study([0.2], [4], sampled_n=10, membranes=10)


def test_ensemble_geometry_overlaps():
    a, b, x = ensemble_geometry(0.3, 0.2, -0.1)
    assert a @ b == pytest.approx(0.3)
    assert x @ a == pytest.approx(0.2)
    assert x @ b == pytest.approx(-0.1)
    assert np.linalg.norm(x) == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        ensemble_geometry(1.0, 0.2)


def test_two_agent_closed_form():
    rng = np.random.default_rng(8)
    for _ in range(30):
        e1, e2 = rng.uniform(0.5, 1.0, size=2)
        c, ca = rng.uniform(-0.45, 0.45, size=2)
        rep = ensemble_symmetry_study([e1, e2], c, ca)
        # oracle: mean of the two individual products
        ind = [0.5 * (1 + ca / e) * 0.5 * (1 + c / e) for e in (e1, e2)]
        assert abs(rep["collective"] - np.mean(ind)) < 1e-12
        assert abs(rep["collective"] - ensemble_closed_form([e1, e2], c, ca)) < 1e-12
        for e, v in zip((e1, e2), rep["individual"]):
            assert abs(v - individual_closed_form(e, c, ca)) < 1e-12


def test_representability():
    assert representability_residual([0.7, 0.7]) < 1e-10
    assert representability_residual([0.6, 0.9]) > 1e-3
    rep = ensemble_symmetry_study([0.8, 0.8], 0.3, 0.3)
    assert rep["single_eps_representable"]
    assert rep["best_single_eps"] == pytest.approx(0.8)


def test_per_agent_q_vanishes():
    rep = ensemble_symmetry_study([0.6, 0.9], 0.3, 0.3, 0.1)
    assert max(abs(v) for v in rep["per_agent_q"]) < 1e-12
    assert max(abs(v) for v in rep["per_agent_q1"] + rep["per_agent_q2"]) < 1e-12
    assert abs(rep["effective_q1"]) > 1e-3
    assert abs(rep["effective_q1"] + rep["effective_q2"] - rep["collective_q"]) < 1e-12


def test_ensemble_preconditions():
    with pytest.raises(PreconditionError):
        ensemble_symmetry_study([0.2, 0.9], 0.3, 0.3)
    with pytest.raises(PreconditionError):
        ensemble_symmetry_study([], 0.1, 0.1)
