"""Probability-model diagnostics for two-outcome GTR scenarios.

Covers the classical commutativity functional, reciprocity, the q-test with
its relative-indeterminism (q1) and relative-asymmetry (q2) split, the
universal-average convergence study and the ensemble symmetry-breaking study.
Exact verdicts use an absolute tolerance of ``EXACT_TOL``; Monte Carlo
verdicts use ``SIGMA_K`` standard errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .engine import Agent, Measurement, ensemble_probability, sequential_probability
from .simplex import band, barycentric_of, project_onto, regions_of
from .membranes import (
    Epsilon,
    cellular_average_probability,
    sampled_cellular_average,
    sampled_cellular_average_2d,
)

EXACT_TOL = 1e-10
SIGMA_K = 3.0
CSV_SCHEMA = "gtr-diagnostics/1"


class PreconditionError(ValueError):
    pass


def _two_outcome(*ms: Measurement) -> None:
    for m in ms:
        if m.n_groups != 2:
            raise PreconditionError(f"measurement {m.label!r} must have two outcomes")


def transition(m: Measurement, x, outcome: int, agent: Agent | None = None) -> float:
    """P(x -> outcome) for a single measurement, using the agent's density."""
    agent = agent or Agent()
    return float(m.probabilities(x, agent.density_for(m))[outcome])


# -- q-test -------------------------------------------------------------------

@dataclass(frozen=True)
class QReport:
    """q-test result.

    Attributes
    ----------
    q, q1, q2 : float
        Total value and its relative-indeterminism / relative-asymmetry split.
    components : dict
        The eight transition probabilities entering the expansion and the four
        chained probabilities.
    method : str
        ``"exact"`` or ``"monte-carlo"``.
    sigma : float
        Standard error of ``q`` (0 for exact reports).
    """

    q: float
    q1: float
    q2: float
    components: dict
    method: str = "exact"
    sigma: float = 0.0

    @property
    def decomposition_residual(self) -> float:
        return abs(self.q - (self.q1 + self.q2))

    def to_dict(self) -> dict:
        return {"q": self.q, "q1": self.q1, "q2": self.q2, "components": dict(self.components),
                "method": self.method, "sigma": self.sigma,
                "decomposition_residual": self.decomposition_residual}


def q_chains(a: Measurement, b: Measurement) -> dict:
    """The four sequences of the q-test, keyed by name."""
    return {
        "a,-b": [(a, 0), (b, 1)],
        "-a,b": [(a, 1), (b, 0)],
        "b,-a": [(b, 0), (a, 1)],
        "-b,a": [(b, 1), (a, 0)],
    }


def q_from_transitions(t: dict) -> tuple[float, float, float]:
    """q, q1, q2 from the eight transition probabilities."""
    q1 = t["-a->b"] - t["-b->a"]
    q2 = t["x->a"] * (t["a->-b"] - t["-a->b"]) + t["x->b"] * (t["-b->a"] - t["b->-a"])
    q = (t["x->a"] * t["a->-b"] + t["x->-a"] * t["-a->b"]
         - t["x->b"] * t["b->-a"] - t["x->-b"] * t["-b->a"])
    return q, q1, q2


def transitions(a: Measurement, b: Measurement, x, agent: Agent | None = None) -> dict:
    va, vb = a.simplex.vertices, b.simplex.vertices
    return {
        "x->a": transition(a, x, 0, agent),
        "x->-a": transition(a, x, 1, agent),
        "x->b": transition(b, x, 0, agent),
        "x->-b": transition(b, x, 1, agent),
        "a->-b": transition(b, va[0], 1, agent),
        "-a->b": transition(b, va[1], 0, agent),
        "b->-a": transition(a, vb[0], 1, agent),
        "-b->a": transition(a, vb[1], 0, agent),
    }


def q_test(a: Measurement, b: Measurement, x, agent: Agent | None = None,
           trials: int = 0, rng: np.random.Generator | None = None) -> QReport:
    """q-test for two two-outcome measurements on state ``x``.

    Outcome 0 of each measurement is the positive pole (``a`` or ``b``).  The
    chained probabilities come from :func:`sequential_probability`.  With
    ``trials > 0`` the four chained probabilities are also estimated by
    sampling, and the report carries the Monte Carlo value and its error.
    """
    _two_outcome(a, b)
    t = transitions(a, b, x, agent)
    chains = q_chains(a, b)
    seq = {k: sequential_probability(c, x, agent) for k, c in chains.items()}
    q = seq["a,-b"] + seq["-a,b"] - seq["b,-a"] - seq["-b,a"]
    _, q1, q2 = q_from_transitions(t)
    comps = {**t, **{f"seq({k})": v for k, v in seq.items()}}
    if trials <= 0:
        return QReport(q, q1, q2, comps)
    if rng is None:
        raise PreconditionError("Monte Carlo q-test needs an rng")
    est, var = 0.0, 0.0
    for k, sign in (("a,-b", 1), ("-a,b", 1), ("b,-a", -1), ("-b,a", -1)):
        p = mc_chain_frequency(chains[k], x, trials, rng, agent)
        est += sign * p
        var += p * (1 - p) / trials
    return QReport(est, q1, q2, {**comps, "q_exact": q}, "monte-carlo", float(np.sqrt(var)))


def mc_chain_frequency(chain, x0, trials: int, rng: np.random.Generator, agent: Agent | None = None) -> float:
    """Empirical frequency of a chain of singleton or first-type outcomes.

    Runs are grouped by the vertex they currently occupy, so each step is one
    vectorised draw per distinct state.
    """
    agent = agent or Agent()
    if agent.strategy != "none":
        raise PreconditionError("vectorised chains need agents without updates")
    groups = {None: trials}  # current vertex index (None = initial state) -> count
    prev = None
    for m, target in chain:
        nxt: dict = {}
        for idx, count in groups.items():
            x = np.asarray(x0, float) if idx is None else prev.simplex.vertices[idx]
            dens = agent.density_for(m)
            bx = barycentric_of(m.simplex, project_onto(m.simplex, x))
            w, _ = dens.sample(m.simplex.n_outcomes, count, rng)
            out = regions_of(bx, w)
            hits = out[np.isin(out, m.groups[target])]
            for o, c in zip(*np.unique(hits, return_counts=True)):
                nxt[int(o)] = nxt.get(int(o), 0) + int(c)
        groups, prev = nxt, m
    return sum(groups.values()) / trials


def q1_integral(rho_a, rho_b, cos_theta: float) -> float:
    """Integral of (rho_B - rho_A) over [cos_theta, 1] for band densities."""
    return rho_b.mass_between(cos_theta, 1.0) - rho_a.mass_between(cos_theta, 1.0)


# -- classical commutativity and reciprocity ----------------------------------

def classical_commutativity(a: Measurement, b: Measurement, x0=None, agent: Agent | None = None,
                            tol: float = EXACT_TOL) -> dict:
    """Both sides of the commutativity functional, starting in ``b`` by default.

    ``commutator`` is P(->b->a|x0) - P(->a->b|x0); a classical single-sample-
    space model requires it to vanish.
    """
    _two_outcome(a, b)
    x0 = b.simplex.vertices[0] if x0 is None else np.asarray(x0, float)
    ba = sequential_probability([(b, 0), (a, 0)], x0, agent)
    ab = sequential_probability([(a, 0), (b, 0)], x0, agent)
    p_ba = transition(a, b.simplex.vertices[0], 0, agent)
    p_ab = transition(b, a.simplex.vertices[0], 0, agent)
    lhs = ba - ab
    rhs = p_ba * (1.0 - p_ab)
    return {
        "P(b->a)": p_ba,
        "P(a->b)": p_ab,
        "P(->b->a|x)": ba,
        "P(->a->b|x)": ab,
        "commutator": lhs,
        "rhs": rhs,
        "residual": abs(lhs - rhs),
        "verdict": "Kolmogorovian-compatible" if abs(lhs) < tol else "non-Kolmogorovian",
    }


def reciprocity_residual(a: Measurement, b: Measurement, agent: Agent | None = None) -> float:
    """|P(a->b) - P(b->a)| for the positive poles of two bands."""
    _two_outcome(a, b)
    return abs(transition(b, a.simplex.vertices[0], 0, agent) - transition(a, b.simplex.vertices[0], 0, agent))


@dataclass(frozen=True)
class ModelVerdict:
    kolmogorovian_commutativity: float
    reciprocity_residual: float
    qq_residual: float
    tolerance: float = EXACT_TOL
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def hilbertian_candidate(self) -> bool:
        return self.reciprocity_residual < self.tolerance and self.qq_residual < self.tolerance

    def to_dict(self) -> dict:
        return {"kolmogorovian_commutativity": self.kolmogorovian_commutativity,
                "reciprocity_residual": self.reciprocity_residual,
                "qq_residual": self.qq_residual, "tolerance": self.tolerance,
                "hilbertian_candidate": self.hilbertian_candidate, "notes": list(self.notes)}


def model_verdict(a: Measurement, b: Measurement, x, agent: Agent | None = None) -> ModelVerdict:
    cc = classical_commutativity(a, b, agent=agent)
    rec = reciprocity_residual(a, b, agent)
    q = q_test(a, b, x, agent)
    notes = []
    if abs(cc["commutator"]) >= EXACT_TOL:
        notes.append("sequential order matters: no single classical sample space")
    if rec < EXACT_TOL and abs(q.q) < EXACT_TOL:
        notes.append("reciprocity and QQ-equality hold; this alone does not imply Born statistics")
    return ModelVerdict(abs(cc["commutator"]), rec, abs(q.q), EXACT_TOL, tuple(notes))


# -- universal average --------------------------------------------------------

def universal_average_study(cos_grid, n_grid, sampled_n: int | None = None, membranes: int = 0,
                            rng: np.random.Generator | None = None, k3: int | None = None,
                            state3=None) -> dict:
    """Gap between cellular averages and the uniform answer.

    Exact rows use rational enumeration; ``sampled_n`` adds a Monte Carlo row
    per ``cos`` with ``membranes`` random membranes.  ``k3`` adds a sampled
    three-outcome row on a ``k3 * k3`` triangle grid at barycentric ``state3``.
    """
    rows = []
    trend = {}
    for c in cos_grid:
        cf = Fraction(c)
        target = (1 + cf) / 2
        gaps = []
        for n in n_grid:
            p, _ = cellular_average_probability(int(n), cf)
            gap = abs(p - target)
            gaps.append(gap)
            rows.append({"cos": float(c), "n": int(n), "mode": "exact", "average": float(p), "exact": str(p),
                         "uniform": float(target), "gap": float(gap), "se": 0.0})
        trend[str(float(c))] = {
            "shrinks": bool(len(gaps) > 1 and gaps[-1] < gaps[0]),
            "monotone": bool(all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))),
        }
    out = {"rows": rows, "trend": trend, "shrinks_everywhere": all(t["shrinks"] for t in trend.values()),
           "max_exact_gap": max((r["gap"] for r in rows), default=0.0)}
    if sampled_n:
        if rng is None:
            raise PreconditionError("sampled rows need an rng")
        for c in cos_grid:
            mean, se = sampled_cellular_average(int(sampled_n), float(c), int(membranes), rng)
            target = (1 + float(c)) / 2
            rows.append({"cos": float(c), "n": int(sampled_n), "mode": "sampled", "average": mean,
                         "uniform": target, "gap": abs(mean - target), "se": se})
        out["max_sampled_gap"] = max(r["gap"] for r in rows if r["mode"] == "sampled")
    if k3:
        if rng is None:
            raise PreconditionError("sampled rows need an rng")
        bx = np.full(3, 1 / 3) if state3 is None else np.asarray(state3, float)
        mean, se = sampled_cellular_average_2d(int(k3), bx, int(membranes), rng)
        out["three_outcome"] = {"cells": int(k3) ** 2, "state": bx.tolist(), "average": mean.tolist(),
                                "se": se.tolist(), "max_gap": float(np.max(np.abs(mean - bx)))}
    return out


# -- ensemble symmetry breaking -----------------------------------------------

def ensemble_geometry(cos_theta: float, cos_theta_a: float, cos_theta_b: float | None = None):
    """Unit vectors a, b, x in R^3 with a.b, x.a and x.b as requested."""
    cb = cos_theta_a if cos_theta_b is None else cos_theta_b
    s = np.sqrt(1 - cos_theta ** 2)
    if s < 1e-12:
        raise PreconditionError("bands must not be parallel")
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([cos_theta, s, 0.0])
    u = (cb - cos_theta_a * cos_theta) / s
    w2 = 1 - cos_theta_a ** 2 - u ** 2
    if w2 < -1e-12:
        raise PreconditionError("no unit state has the requested overlaps")
    x = np.array([cos_theta_a, u, np.sqrt(max(w2, 0.0))])
    return a, b, x


def ensemble_closed_form(eps, cos_theta: float, cos_theta_a: float) -> float:
    """Closed-form two-agent collective probability of the sequence a then b."""
    e1, e2 = eps
    return 0.25 * (1 + (e1 + e2) / (2 * e1 * e2) * (cos_theta + cos_theta_a)
                   + (e1 ** 2 + e2 ** 2) / (2 * e1 ** 2 * e2 ** 2) * cos_theta * cos_theta_a)


def individual_closed_form(eps: float, cos_theta: float, cos_theta_a: float) -> float:
    return 0.25 * (1 + (cos_theta + cos_theta_a) / eps + cos_theta * cos_theta_a / eps ** 2)


def representability_residual(eps) -> float:
    """Variance of 1/eps over the agents.

    A mean of single-eps products is again of single-eps form only when the
    average of 1/eps^2 equals the square of the average of 1/eps.
    """
    inv = 1.0 / np.asarray(eps, dtype=float)
    return float(np.mean(inv ** 2) - np.mean(inv) ** 2)


def ensemble_symmetry_study(eps, cos_theta: float, cos_theta_a: float,
                            cos_theta_b: float | None = None) -> dict:
    """Individual versus collective statistics for agents with eps-bands.

    Every agent uses ``Epsilon(eps_i)`` for both measurements, so each agent on
    its own satisfies q1 = q2 = 0.  The report contains the collective
    probability of the sequence a then b, its closed form for two agents, the
    single-eps representability residual, the collective q-test and the
    effective q1/q2 of the averaged transition probabilities.
    """
    eps = [float(e) for e in eps]
    if not eps or min(eps) <= 0:
        raise PreconditionError("need at least one positive eps")
    cb = cos_theta_a if cos_theta_b is None else cos_theta_b
    if max(abs(cos_theta), abs(cos_theta_a), abs(cb)) >= min(eps):
        raise PreconditionError("all overlaps must be smaller in magnitude than every eps")
    av, bv, x = ensemble_geometry(cos_theta, cos_theta_a, cos_theta_b)
    ma = Measurement(band(av), Epsilon(1.0), label="A")
    mb = Measurement(band(bv), Epsilon(1.0), label="B")
    agents = [Agent(f"agent{i}", {"A": Epsilon(e), "B": Epsilon(e)}) for i, e in enumerate(eps)]
    chain = [(ma, 0), (mb, 0)]
    collective = ensemble_probability(agents, chain, x)
    individual = [sequential_probability(chain, x, ag) for ag in agents]
    report = {
        "eps": eps, "cos_theta": cos_theta, "cos_theta_a": cos_theta_a, "cos_theta_b": cb,
        "individual": individual,
        "individual_closed_form": [individual_closed_form(e, cos_theta, cos_theta_a) for e in eps],
        "collective": collective,
    }
    if len(eps) == 2:
        cf = ensemble_closed_form(eps, cos_theta, cos_theta_a)
        report["closed_form"] = cf
        report["closed_form_residual"] = abs(collective - cf)
    res = representability_residual(eps)
    report["representability_residual"] = res
    report["single_eps_representable"] = bool(res < EXACT_TOL)
    report["best_single_eps"] = float(1.0 / np.mean(1.0 / np.asarray(eps)))

    # per-agent and collective q-tests
    per_agent = [q_test(ma, mb, x, ag) for ag in agents]
    t_coll = {k: float(np.mean([transitions(ma, mb, x, ag)[k] for ag in agents]))
              for k in per_agent[0].components if "->" in k and not k.startswith("seq")}
    seq_coll = {k: float(np.mean([r.components[f"seq({k})"] for r in per_agent]))
                for k in ("a,-b", "-a,b", "b,-a", "-b,a")}
    q_coll = seq_coll["a,-b"] + seq_coll["-a,b"] - seq_coll["b,-a"] - seq_coll["-b,a"]
    # effective transitions seen by the collective: chained / first-step probability
    eff = {
        "x->a": t_coll["x->a"], "x->-a": t_coll["x->-a"],
        "x->b": t_coll["x->b"], "x->-b": t_coll["x->-b"],
        "a->-b": seq_coll["a,-b"] / t_coll["x->a"],
        "-a->b": seq_coll["-a,b"] / t_coll["x->-a"],
        "b->-a": seq_coll["b,-a"] / t_coll["x->b"],
        "-b->a": seq_coll["-b,a"] / t_coll["x->-b"],
    }
    _, q1_eff, q2_eff = q_from_transitions(eff)
    report["per_agent_q"] = [r.q for r in per_agent]
    report["per_agent_q1"] = [r.q1 for r in per_agent]
    report["per_agent_q2"] = [r.q2 for r in per_agent]
    report["collective_q"] = q_coll
    report["effective_q1"] = q1_eff
    report["effective_q2"] = q2_eff
    report["effective_transitions"] = eff
    return report
