"""Built-in scenarios, each with an expectation block that its run must satisfy."""
from __future__ import annotations

import copy

V = "gtr-scenario/1"


def E(text: str) -> dict:
    return {"expr": text}


NICKEL = [E("2999.5/6000"), E("2999.5/6000"), E("1/6000")]

_PRESETS: dict[str, dict] = {
    "coin-nickel": {
        "version": V,
        "description": "Uniform three-outcome membrane with the nickel state; sub-region areas by Monte Carlo.",
        "seed": 1001,
        "trials": 100000,
        "entities": {"coin": {"dim": 2}},
        "measurements": {"toss": {"entity": "coin", "simplex": {"n": 3}, "density": {"kind": "uniform"}}},
        "states": {"nickel": {"on": "toss", "barycentric": NICKEL}},
        "requests": [
            {"id": "probabilities", "kind": "probabilities", "measurement": "toss", "state": "nickel", "mc": True,
             "expect": [
                 {"path": "exact.0", "equals": E("2999.5/6000"), "tol": 1e-12},
                 {"path": "exact.1", "equals": E("2999.5/6000"), "tol": 1e-12},
                 {"path": "exact.2", "equals": E("1/6000"), "tol": 1e-12},
                 {"path": "max_z", "lt": 3},
             ]},
            {"id": "areas", "kind": "region_areas", "measurement": "toss", "state": "nickel", "samples": 1000000,
             "expect": [{"path": "max_z", "lt": 3}]},
        ],
    },
    "coin-degenerate": {
        "version": V,
        "description": "Floor and edge fused into one outcome, by relabelling and by an altered membrane.",
        "entities": {"coin": {"dim": 3}},
        "measurements": {
            "first": {"entity": "coin", "simplex": {"n": 3}, "density": {"kind": "uniform"},
                      "groups": [[0, 1], [2]], "degeneracy": "first"},
            "second": {"entity": "coin", "simplex": {"n": 3}, "density": {"kind": "uniform"},
                       "groups": [[0, 1], [2]], "degeneracy": "second"},
        },
        "states": {
            "nickel": {"on": "first", "barycentric": NICKEL},
            "tilted": {"entity": "coin", "coords": [0.3, -0.2, 0.5]},
        },
        "requests": [
            {"id": "first_type", "kind": "degeneracy", "measurement": "first", "state": "nickel",
             "expect": [{"path": "sum_residual", "lt": 1e-10},
                        {"path": "fused.0", "equals": E("2999.5/3000"), "tol": 1e-12},
                        {"path": "fused.1", "equals": E("1/6000"), "tol": 1e-12}]},
            {"id": "second_type", "kind": "degeneracy", "measurement": "second", "state": "tilted",
             "expect": [{"path": "sum_residual", "lt": 1e-10},
                        {"path": "excluded_outcome_probability", "lt": 1e-10},
                        {"path": "fused_state_norms.0", "equals": 1, "tol": 1e-12}]},
        ],
    },
    "fig2-classical-violation": {
        "version": V,
        "description": "Uniform band A and an eps-band B with eps < cos(theta).",
        "params": {"eps": 0.5, "theta": 0.7853981633974483},
        "entities": {"plane": {"dim": 2}},
        "measurements": {
            "A": {"entity": "plane", "simplex": {"angle": 0}, "density": {"kind": "uniform"}},
            "B": {"entity": "plane", "simplex": {"angle": E("theta")}, "density": {"kind": "epsilon", "eps": E("eps")}},
        },
        "states": {
            "a": {"vertex_of": "A", "outcome": 0},
            "x": {"entity": "plane", "angle": 2.2},
        },
        "requests": [
            {"id": "commutativity", "kind": "commutativity", "a": "A", "b": "B",
             "expect": [{"path": "P(a->b)", "equals": 1, "tol": 1e-12},
                        {"path": "P(b->a)", "equals": E("(1+cos(theta))/2"), "tol": 1e-12},
                        {"path": "residual", "lt": 1e-12},
                        {"path": "commutator", "equals": 0, "tol": 1e-12},
                        {"path": "reciprocity_residual", "gt": 0.1}]},
            {"id": "q_test", "kind": "q_test", "a": "A", "b": "B", "state": "x",
             "expect": [{"path": "q1", "equals": E("-(1-cos(theta))/2"), "tol": 1e-10},
                        {"path": "q2", "equals": 0, "tol": 1e-10},
                        {"path": "decomposition_residual", "lt": 1e-10},
                        {"path": "q1_integral", "equals": E("-(1-cos(theta))/2"), "tol": 1e-10}]},
            {"id": "a_to_b", "kind": "probabilities", "measurement": "B", "state": "a"},
        ],
    },
    "fig3-nonhilbert": {
        "version": V,
        "description": "Three eps-bands with eps = 1/sqrt(2) at mutual angles pi/2, pi/4, pi/4.",
        "seed": 3003,
        "entities": {"plane": {"dim": 2}},
        "measurements": {
            "A": {"entity": "plane", "simplex": {"angle": 0}, "density": {"kind": "epsilon", "eps": E("1/sqrt(2)")}},
            "B": {"entity": "plane", "simplex": {"angle": E("pi/2")}, "density": {"kind": "epsilon", "eps": E("1/sqrt(2)")}},
            "C": {"entity": "plane", "simplex": {"angle": E("pi/4")}, "density": {"kind": "epsilon", "eps": E("1/sqrt(2)")}},
        },
        "states": {"a": {"vertex_of": "A", "outcome": 0}},
        "requests": [
            {"id": "witness", "kind": "witness", "a": "A", "b": "B", "c": "C",
             "expect": [{"path": "P(c->-b)", "equals": 0, "tol": 1e-12},
                        {"path": "P(a->-c)", "equals": 0, "tol": 1e-12},
                        {"path": "P(a->-b)", "equals": 0.5, "tol": 1e-12},
                        {"path": "quantum_bound", "lt": 1e-12},
                        {"path": "violates_resolution_identity", "is": True},
                        {"path": "resolution_identity_residual", "lt": 1e-12}]},
            {"id": "a_to_minus_b", "kind": "sequence", "chain": [["B", 1]], "state": "a", "mc": True,
             "trials": 1000000,
             "expect": [{"path": "exact", "equals": 0.5, "tol": 1e-12},
                        {"path": "frequency", "equals": 0.5, "se_path": "se", "k": 3}]},
        ],
    },
    "fig4-replicability": {
        "version": V,
        "description": "A, B, A with a replicability-locking agent versus a non-updating one.",
        "seed": 4004,
        "trials": 10000,
        "entities": {"plane": {"dim": 2}},
        "measurements": {
            "A": {"entity": "plane", "simplex": {"angle": 0}, "density": {"kind": "uniform"}},
            "B": {"entity": "plane", "simplex": {"angle": E("pi/3")}, "density": {"kind": "uniform"}},
        },
        "states": {"x": {"entity": "plane", "angle": 2.2}},
        "agents": {
            "locking": {"strategy": "replicability-lock"},
            "plain": {"strategy": "none"},
        },
        "requests": [
            {"id": "locked", "kind": "replicability", "sequence": ["A", "B", "A"], "state": "x", "agent": "locking",
             "expect": [{"path": "repeat_fraction", "equals": 1, "tol": 0},
                        {"path": "exact_repeat_probability", "equals": 1, "tol": 1e-12},
                        {"path": "order_effect", "gt": 1e-3}]},
            {"id": "unlocked", "kind": "replicability", "sequence": ["A", "B", "A"], "state": "x", "agent": "plain",
             "expect": [{"path": "exact_repeat_probability", "lt": 1},
                        {"path": "repeat_fraction", "lt": 1}]},
        ],
    },
    "universal-average": {
        "version": V,
        "description": "Cellular-membrane averages, exact and sampled, against the uniform membrane.",
        "seed": 5005,
        "requests": [
            {"id": "study", "kind": "universal_average", "cos": [0.2, 0.4, 0.7], "n": [4, 8, 12, 16],
             "sampled_n": 1000, "membranes": 10000, "k3": 8,
             "expect": [{"path": "max_exact_gap", "lt": 1e-15},
                        {"path": "max_sampled_gap", "lt": 0.01},
                        {"path": "three_outcome.max_gap", "lt": 0.01}]},
        ],
    },
    "born-check": {
        "version": V,
        "description": "Uniform membranes on eigen-simplexes against the trace rule, N = 2, 3, 4.",
        "seed": 6006,
        "requests": [
            {"id": "born", "kind": "born_check", "dims": [2, 3, 4], "count": 100,
             "expect": [{"path": "max_born_error", "lt": 1e-10},
                        {"path": "max_decoherence_residual", "lt": 1e-10},
                        {"path": "max_luders_residual", "lt": 1e-8}]},
        ],
    },
    "qq-check": {
        "version": V,
        "description": "Projector identity behind the QQ-equality, and the q-test of a uniform pair.",
        "seed": 7007,
        "entities": {"plane": {"dim": 2}},
        "measurements": {
            "A": {"entity": "plane", "simplex": {"angle": 0}, "density": {"kind": "uniform"}},
            "B": {"entity": "plane", "simplex": {"angle": 1.1}, "density": {"kind": "uniform"}},
        },
        "states": {"x": {"entity": "plane", "angle": 2.5}},
        "requests": [
            {"id": "operator", "kind": "qq_check", "dims": [2, 3, 4, 6], "count": 1000,
             "expect": [{"path": "max_abs_Q", "lt": 1e-12}]},
            {"id": "uniform_q", "kind": "q_test", "a": "A", "b": "B", "state": "x",
             "expect": [{"path": "q", "equals": 0, "tol": 1e-10},
                        {"path": "q1", "equals": 0, "tol": 1e-10},
                        {"path": "q2", "equals": 0, "tol": 1e-10}]},
        ],
    },
    "ensemble-break": {
        "version": V,
        "description": "Two agents with different eps-bands: collective statistics lose single-eps form.",
        "requests": [
            {"id": "different", "kind": "ensemble", "eps": [0.6, 0.9], "cos_theta": 0.3, "cos_theta_a": 0.3,
             "cos_theta_b": 0.1,
             "expect": [{"path": "closed_form_residual", "lt": 1e-12},
                        {"path": "representability_residual", "gt": 1e-10},
                        {"path": "single_eps_representable", "is": False},
                        {"path": "effective_q1", "gt": 1e-3},
                        {"path": "effective_q2", "lt": -1e-3}]},
            {"id": "equal", "kind": "ensemble", "eps": [0.8, 0.8], "cos_theta": 0.3, "cos_theta_a": 0.3,
             "expect": [{"path": "closed_form_residual", "lt": 1e-12},
                        {"path": "representability_residual", "lt": 1e-10},
                        {"path": "single_eps_representable", "is": True}]},
        ],
    },
    "bipartite-product": {
        "version": V,
        "description": "Direct-sum decomposition of two-part states and a pair of independent coins.",
        "seed": 8008,
        "trials": 100000,
        "entities": {"coin": {"dim": 2}},
        "measurements": {"toss": {"entity": "coin", "simplex": {"n": 3}, "density": {"kind": "uniform"}}},
        "states": {"nickel": {"on": "toss", "barycentric": NICKEL}},
        "requests": [
            {"id": "decomposition", "kind": "bipartite", "dims": [[2, 2], [2, 3]], "count": 100,
             "expect": [{"path": "max_product_residual", "lt": 1e-10},
                        {"path": "min_entangled_residual", "gt": 1e-3},
                        {"path": "rows.0.d_a", "equals": E("sqrt(1/3)"), "tol": 1e-15},
                        {"path": "rows.1.d_a", "equals": E("sqrt(1/5)"), "tol": 1e-15},
                        {"path": "rows.1.d_b", "equals": E("sqrt(2/5)"), "tol": 1e-15},
                        {"path": "bell.norm_x_a", "lt": 1e-12},
                        {"path": "bell.norm_x_corr", "gt": 0.5}]},
            {"id": "two_coins", "kind": "product", "a": "toss", "b": "toss", "states": ["nickel", "nickel"],
             "mc": True,
             "expect": [{"path": "joint.0", "equals": E("(2999.5/6000)**2"), "tol": 1e-12},
                        {"path": "marginal_residual", "lt": 1e-12},
                        {"path": "mc.max_z_order", "lt": 3},
                        {"path": "mc.max_z_exact", "lt": 3}]},
        ],
    },
}

NAMES = tuple(_PRESETS)


def preset(name: str) -> dict:
    """A fresh copy of the named scenario."""
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(NAMES)}")
    return copy.deepcopy(_PRESETS[name])
