"""Scenario files: validation, execution and result serialisation.

A scenario is a JSON document (schema ``data/scenario.schema.json``) naming
entities, measurements, states, agents and a list of requests.  Numbers may
be written as ``{"expr": "1/sqrt(2)"}``; expressions may also reference the
scenario's ``params``, which is how sweeps vary a parameter.
"""
from __future__ import annotations

import ast
import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from . import bloch, diagnostics, rng as rngmod
from .engine import (
    Agent,
    Measurement,
    ProductMeasurement,
    run_sequence,
    sample_groups,
    sequential_probability,
)
from .membranes import Density1D, Uniform, density_from_spec
from .simplex import (
    Simplex,
    band,
    barycentric_of,
    make_regular_simplex,
    point_of,
    project_onto,
    regions_of,
    sample_uniform_weights,
)

log = logging.getLogger(__name__)

SCENARIO_VERSION = "gtr-scenario/1"
RESULT_VERSION = "gtr-result/1"
DEFAULT_TRIALS = 100_000
EXACT_TOL = 1e-10
TRACE_RUNS = 20
SEED_ENV = "GTR_DEFAULT_SEED"

MC_KINDS = {"probabilities", "sequence", "q_test", "product"}  # Monte Carlo when "mc" is true
ALWAYS_RANDOM = {"replicability", "region_areas", "born_check", "qq_check", "bipartite"}


class ScenarioError(ValueError):
    """Schema or reference error; ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# -- expressions --------------------------------------------------------------

_FUNCS = {"sqrt": math.sqrt, "cos": math.cos, "sin": math.sin, "acos": math.acos}
_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b, ast.Mult: lambda a, b: a * b,
           ast.Div: lambda a, b: a / b, ast.Pow: lambda a, b: a ** b}


def eval_expr(text: str, names: dict | None = None) -> float:
    """Evaluate a constant expression: numbers, + - * / **, pi, sqrt, cos, sin, acos, params."""
    env = {"pi": math.pi, **(names or {})}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Name) and node.id in env:
            return env[node.id]
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"unsupported expression element {ast.dump(node)[:40]}")

    try:
        return float(ev(ast.parse(text, mode="eval")))
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError) as e:
        raise ValueError(f"bad expression {text!r}: {e}") from None


def resolve_exprs(obj, names: dict, path: str = ""):
    """Replace every ``{"expr": ...}`` node by its value."""
    if isinstance(obj, dict):
        if set(obj) == {"expr"} and isinstance(obj["expr"], str):
            try:
                return eval_expr(obj["expr"], names)
            except ValueError as e:
                raise ScenarioError(str(e), path) from None
        return {k: resolve_exprs(v, names, _join(path, k)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [resolve_exprs(v, names, f"{path}[{i}]") for i, v in enumerate(obj)]
    return obj


def _join(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


# -- loading and validation ---------------------------------------------------

@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("gtr").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


def parse_text(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e.msg}", f"line {e.lineno} column {e.colno}") from None


def validate(doc: dict) -> None:
    """Schema validation; raises :class:`ScenarioError` with the deepest field path."""
    validator = jsonschema.Draft7Validator(schema())
    errors = list(validator.iter_errors(doc))
    if not errors:
        return
    err = jsonschema.exceptions.best_match(errors)
    # descend into oneOf/anyOf branches for a more specific location
    while err.context:
        err = max(err.context, key=lambda e: len(e.absolute_path))
    path = ""
    for k in err.absolute_path:
        path = _join(path, k)
    raise ScenarioError(err.message, path or "<root>")


def load(text: str, env_seed: str | None = None) -> dict:
    """Parse, validate and resolve a scenario; fills in the seed if needed."""
    doc = parse_text(text)
    validate(doc)
    names = {k: float(v) for k, v in doc.get("params", {}).items()}
    doc = resolve_exprs(doc, names)
    if "seed" not in doc and needs_seed(doc):
        env_seed = os.environ.get(SEED_ENV) if env_seed is None else env_seed
        if env_seed is None:
            raise ScenarioError(f"a seed is required for Monte Carlo requests (or set {SEED_ENV})", "seed")
        try:
            doc["seed"] = int(env_seed)
        except ValueError:
            raise ScenarioError(f"{SEED_ENV} must be an integer", "seed") from None
        log.warning("scenario has no seed; using %s=%s", SEED_ENV, doc["seed"])
    return doc


def needs_seed(doc: dict) -> bool:
    for r in doc.get("requests", []):
        if r["kind"] in ALWAYS_RANDOM or (r["kind"] in MC_KINDS and r.get("mc")):
            return True
        if r["kind"] == "universal_average" and (r.get("sampled_n") or r.get("k3")):
            return True
    return False


# -- building objects ---------------------------------------------------------

def _vec(values, dim: int, path: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (dim,):
        raise ScenarioError(f"expected {dim} coordinates, got {v.size}", path)
    return v


def _plane_vector(angle: float, plane, dim: int, path: str) -> np.ndarray:
    i, j = plane
    if max(i, j) >= dim or i == j:
        raise ScenarioError(f"plane {plane} invalid for dimension {dim}", path)
    v = np.zeros(dim)
    v[i] = math.cos(angle)
    v[j] += math.sin(angle)
    return v


def build_simplex(spec: dict, dim: int, path: str) -> Simplex:
    try:
        if "axis" in spec:
            return band(_vec(spec["axis"], dim, _join(path, "axis")))
        if "angle" in spec:
            if dim < 2:
                raise ScenarioError("angles need dimension >= 2", path)
            return band(_plane_vector(spec["angle"], spec.get("plane", [0, 1]), dim, path))
        if "n" in spec:
            rots = [(int(i), int(j), float(a)) for i, j, a in spec.get("rotations", [])]
            return make_regular_simplex(int(spec["n"]), dim, rots)
        return Simplex(np.asarray(spec["vertices"], dtype=float))
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError(str(e), path) from None


@dataclass
class Context:
    """Resolved objects of one scenario."""

    doc: dict
    dims: dict = field(default_factory=dict)
    measurements: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)
    agents: dict = field(default_factory=dict)

    def measurement(self, label: str, path: str) -> Measurement:
        if label not in self.measurements:
            raise ScenarioError(f"unknown measurement {label!r}", path)
        return self.measurements[label]

    def state(self, name: str, path: str) -> np.ndarray:
        if name not in self.states:
            raise ScenarioError(f"unknown state {name!r}", path)
        return self.states[name]

    def agent(self, name: str | None, path: str) -> Agent:
        if name is None:
            return Agent()
        if name not in self.agents:
            raise ScenarioError(f"unknown agent {name!r}", path)
        return self.agents[name]


def build_context(doc: dict) -> Context:
    ctx = Context(doc)
    for name, e in doc.get("entities", {}).items():
        ctx.dims[name] = int(e["dim"])
    for label, spec in doc.get("measurements", {}).items():
        path = f"measurements.{label}"
        ent = spec["entity"]
        if ent not in ctx.dims:
            raise ScenarioError(f"unknown entity {ent!r}", _join(path, "entity"))
        simplex = build_simplex(spec["simplex"], ctx.dims[ent], _join(path, "simplex"))
        try:
            density = density_from_spec(spec["density"], simplex.n_outcomes)
        except (ValueError, KeyError) as e:
            raise ScenarioError(str(e), _join(path, "density")) from None
        groups = spec.get("groups")
        try:
            ctx.measurements[label] = Measurement(
                simplex, density, tuple(tuple(g) for g in groups) if groups else None,
                spec.get("degeneracy", "first"), label)
        except ValueError as e:
            raise ScenarioError(str(e), path) from None
    for name, spec in doc.get("states", {}).items():
        ctx.states[name] = _build_state(ctx, spec, f"states.{name}")
    for name, spec in doc.get("agents", {}).items():
        path = f"agents.{name}"
        dens = {}
        for label, dspec in spec.get("densities", {}).items():
            m = ctx.measurement(label, _join(_join(path, "densities"), label))
            try:
                d = density_from_spec(dspec, m.simplex.n_outcomes)
                d.check_simplex(m.simplex)
            except (ValueError, KeyError) as e:
                raise ScenarioError(str(e), _join(_join(path, "densities"), label)) from None
            dens[label] = d
        ctx.agents[name] = Agent(name, dens, spec.get("strategy", "none"))
    for i, req in enumerate(doc.get("requests", [])):
        _check_request(ctx, req, f"requests[{i}]")
    ids = [r["id"] for r in doc.get("requests", [])]
    if len(set(ids)) != len(ids):
        raise ScenarioError("request ids must be unique", "requests")
    return ctx


def _build_state(ctx: Context, spec: dict, path: str) -> np.ndarray:
    if "vertex_of" in spec:
        m = ctx.measurement(spec["vertex_of"], _join(path, "vertex_of"))
        if spec["outcome"] >= m.simplex.n_outcomes:
            raise ScenarioError("outcome index out of range", _join(path, "outcome"))
        return m.simplex.vertices[spec["outcome"]].copy()
    if "on" in spec:
        m = ctx.measurement(spec["on"], _join(path, "on"))
        w = _vec(spec["barycentric"], m.simplex.n_outcomes, _join(path, "barycentric"))
        if np.min(w) < 0 or abs(w.sum() - 1) > 1e-12:
            raise ScenarioError("barycentric weights must be non-negative and sum to 1", _join(path, "barycentric"))
        return point_of(m.simplex, w)
    ent = spec["entity"]
    if ent not in ctx.dims:
        raise ScenarioError(f"unknown entity {ent!r}", _join(path, "entity"))
    dim = ctx.dims[ent]
    if "coords" in spec:
        v = _vec(spec["coords"], dim, _join(path, "coords"))
    else:
        v = _plane_vector(spec["angle"], spec.get("plane", [0, 1]), dim, path)
    if np.linalg.norm(v) > 1 + 1e-10:
        raise ScenarioError("states must lie in the unit ball", path)
    return v


_REQUIRED = {
    "probabilities": ("measurement", "state"),
    "sequence": ("chain", "state"),
    "replicability": ("sequence", "state"),
    "commutativity": ("a", "b"),
    "q_test": ("a", "b", "state"),
    "witness": ("a", "b", "c"),
    "degeneracy": ("measurement", "state"),
    "region_areas": ("measurement", "state"),
    "universal_average": ("cos", "n"),
    "ensemble": ("eps", "cos_theta", "cos_theta_a"),
    "born_check": ("dims", "count"),
    "qq_check": ("dims", "count"),
    "bipartite": ("dims", "count"),
    "product": ("a", "b", "states"),
}


def _check_request(ctx: Context, req: dict, path: str) -> None:
    for key in _REQUIRED[req["kind"]]:
        if key not in req:
            raise ScenarioError(f"'{key}' is required for kind {req['kind']!r}", path)
    for key in ("measurement", "a", "b", "c"):
        if key in req:
            ctx.measurement(req[key], _join(path, key))
    for key in ("state",):
        if key in req:
            ctx.state(req[key], _join(path, key))
    for i, s in enumerate(req.get("states", [])):
        ctx.state(s, f"{path}.states[{i}]")
    if "agent" in req:
        ctx.agent(req["agent"], _join(path, "agent"))
    for i, (label, g) in enumerate(req.get("chain", [])):
        m = ctx.measurement(label, f"{path}.chain[{i}][0]")
        if g >= m.n_groups:
            raise ScenarioError("outcome group out of range", f"{path}.chain[{i}][1]")
    for i, label in enumerate(req.get("sequence", [])):
        ctx.measurement(label, f"{path}.sequence[{i}]")


# -- Monte Carlo block workers (module level so they pickle) --------------------

@lru_cache(maxsize=8)
def _context_of(doc_json: str) -> Context:
    return build_context(json.loads(doc_json))


def _request(doc_json: str, index: int) -> tuple[Context, dict]:
    ctx = _context_of(doc_json)
    return ctx, ctx.doc["requests"][index]


def _mc_probabilities(doc_json, index, rng, n):
    ctx, r = _request(doc_json, index)
    m = ctx.measurements[r["measurement"]]
    ag = ctx.agent(r.get("agent"), "")
    g = sample_groups(m, ctx.states[r["state"]], n, rng, ag.density_for(m))
    return np.bincount(g, minlength=m.n_groups)


def _vectorisable(ctx: Context, chain, agent: Agent) -> bool:
    return agent.strategy == "none" and all(
        ctx.measurements[l].degeneracy == "first" or len(ctx.measurements[l].groups[g]) == 1 for l, g in chain)


def _mc_sequence(doc_json, index, rng, n):
    ctx, r = _request(doc_json, index)
    ag = ctx.agent(r.get("agent"), "")
    chain = [(ctx.measurements[l], g) for l, g in r["chain"]]
    x0 = ctx.states[r["state"]]
    if _vectorisable(ctx, r["chain"], ag):
        return round(diagnostics.mc_chain_frequency(chain, x0, n, rng, ag) * n)
    hits = 0
    ms = [m for m, _ in chain]
    for _ in range(n):
        recs, _ = run_sequence(ms, x0, ag, rng)
        hits += all(rec.group == g for rec, (_, g) in zip(recs, chain))
    return hits


def _mc_qtest(doc_json, index, rng, n):
    ctx, r = _request(doc_json, index)
    ag = ctx.agent(r.get("agent"), "")
    chains = diagnostics.q_chains(ctx.measurements[r["a"]], ctx.measurements[r["b"]])
    x0 = ctx.states[r["state"]]
    return np.array([round(diagnostics.mc_chain_frequency(chains[k], x0, n, rng, ag) * n)
                     for k in ("a,-b", "-a,b", "b,-a", "-b,a")])


def _mc_replicability(doc_json, index, rng, n):
    ctx, r = _request(doc_json, index)
    ag = ctx.agent(r.get("agent"), "")
    ms = [ctx.measurements[l] for l in r["sequence"]]
    x0 = ctx.states[r["state"]]
    repeats = 0
    for _ in range(n):
        recs, _ = run_sequence(ms, x0, ag, rng)
        first: dict = {}
        ok = True
        for m, rec in zip(ms, recs):
            if first.setdefault(m.label, rec.group) != rec.group:
                ok = False
        repeats += ok
    return repeats


def _mc_product(doc_json, index, rng, n):
    ctx, r = _request(doc_json, index)
    ma, mb = ctx.measurements[r["a"]], ctx.measurements[r["b"]]
    xa, xb = (ctx.states[s] for s in r["states"])
    size = ma.n_groups * mb.n_groups
    out = []
    for order in ("ab", "ba"):
        if order == "ab":
            ga = sample_groups(ma, xa, n, rng)
            gb = sample_groups(mb, xb, n, rng)
        else:
            gb = sample_groups(mb, xb, n, rng)
            ga = sample_groups(ma, xa, n, rng)
        out.append(np.bincount(ga * mb.n_groups + gb, minlength=size))
    return np.array(out)


def _mc_regions(doc_json, index, rng, n):
    ctx, r = _request(doc_json, index)
    m = ctx.measurements[r["measurement"]]
    bx = barycentric_of(m.simplex, project_onto(m.simplex, ctx.states[r["state"]]))
    w = sample_uniform_weights(m.simplex.n_outcomes, n, rng)
    return np.bincount(regions_of(bx, w), minlength=m.simplex.n_outcomes)


# -- request handlers ---------------------------------------------------------

@dataclass
class Runner:
    ctx: Context
    doc_json: str
    seed: int | None
    workers: int = 1
    trace: bool = False

    def mc(self, fn, index: int, req: dict, total: int):
        parts = rngmod.run_blocks(fn, (self.doc_json, index), total, self.seed, req["id"], self.workers)
        return sum(parts[1:], parts[0])

    def trials(self, req: dict) -> int:
        return int(req.get("trials", self.ctx.doc.get("trials", DEFAULT_TRIALS)))

    def trace_runs(self, req: dict, ms, x0, agent) -> list:
        g = rngmod.stream(self.seed if self.seed is not None else 0, "trace:" + req["id"])
        runs = []
        for _ in range(TRACE_RUNS):
            recs, _ = run_sequence(ms, x0, agent, g, trace=True)
            runs.append([{"measurement": m.label, "group": rec.group, "outcome": rec.outcome,
                          "breakpoint": rec.breakpoint.weights, "source": rec.breakpoint.source,
                          "final_state": rec.final_state, **rec.trace} for m, rec in zip(ms, recs)])
        return runs


def _freq(counts, total):
    counts = np.asarray(counts, dtype=float)
    f = counts / total
    return f, np.sqrt(f * (1 - f) / total)


def _max_z(freq, exact, n):
    """Largest |freq - p| / sqrt(p(1 - p)/n), with the error taken from the exact p."""
    p = np.asarray(exact, dtype=float)
    se = np.sqrt(p * (1 - p) / n)
    diff = np.abs(np.asarray(freq, dtype=float) - p)
    z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 0, np.inf, 0.0))
    return float(np.max(z))


def _max_z_pair(f1, f2, n):
    """Two-sample z for equal trial counts, using the pooled frequency."""
    pooled = (np.asarray(f1) + np.asarray(f2)) / 2
    se = np.sqrt(2 * pooled * (1 - pooled) / n)
    diff = np.abs(np.asarray(f1) - np.asarray(f2))
    z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), 0.0)
    return float(np.max(z))


def h_probabilities(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    m = ctx.measurements[r["measurement"]]
    x = ctx.states[r["state"]]
    ag = ctx.agent(r.get("agent"), "")
    rep = m.outcome_report(x, ag.density_for(m))
    out = {"exact": rep.probs, "exact_kernel": rep.exact, "flags": list(rep.flags),
           "tolerance": EXACT_TOL, "total": float(rep.probs.sum())}
    if rep.stderr is not None:
        out["exact_se"] = rep.stderr
    if r.get("mc"):
        n = run.trials(r)
        f, se = _freq(run.mc(_mc_probabilities, i, r, n), n)
        out.update(frequencies=f, se=se, trials=n, max_z=_max_z(f, rep.probs, n))
    if run.trace:
        out["trace"] = run.trace_runs(r, [m], x, ag)
    return out


def h_sequence(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    chain = [(ctx.measurements[l], g) for l, g in r["chain"]]
    x = ctx.states[r["state"]]
    ag = ctx.agent(r.get("agent"), "")
    p = sequential_probability(chain, x, ag)
    m0, g0 = chain[0]
    out = {"exact": p, "tolerance": EXACT_TOL, "first_step": float(m0.probabilities(x, ag.density_for(m0))[g0])}
    if r.get("mc"):
        n = run.trials(r)
        f, se = _freq(run.mc(_mc_sequence, i, r, n), n)
        out.update(frequency=float(f), se=float(se), trials=n, z=_max_z([f], [p], n))
    if run.trace:
        out["trace"] = run.trace_runs(r, [m for m, _ in chain], x, ag)
    return out


def h_replicability(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    ms = [ctx.measurements[l] for l in r["sequence"]]
    x = ctx.states[r["state"]]
    ag = ctx.agent(r.get("agent"), "")
    n = run.trials(r)
    repeats = int(run.mc(_mc_replicability, i, r, n))
    out = {"trials": n, "repeats": repeats, "repeat_fraction": repeats / n,
           "strategy": ag.strategy}
    # exact probability that every repeated measurement repeats its first outcome
    out["exact_repeat_probability"] = _exact_repeat(ms, x, ag)
    labels = list(dict.fromkeys(m.label for m in ms))
    if len(labels) >= 2:
        m1, m2 = ctx.measurements[labels[0]], ctx.measurements[labels[1]]
        first = np.array([[sequential_probability([(m1, a), (m2, b)], x, ag) for b in range(m2.n_groups)]
                          for a in range(m1.n_groups)])
        second = np.array([[sequential_probability([(m2, b), (m1, a)], x, ag) for b in range(m2.n_groups)]
                           for a in range(m1.n_groups)])
        out["order"] = {f"{labels[0]},{labels[1]}": first, f"{labels[1]},{labels[0]}": second}
        out["order_effect"] = float(np.max(np.abs(first - second)))
    if run.trace:
        out["trace"] = run.trace_runs(r, ms, x, ag)
    return out


def _exact_repeat(ms, x, agent) -> float:
    def walk(k, chain):
        if k == len(ms):
            return sequential_probability(chain, x, agent)
        m = ms[k]
        prior = [g for mm, g in chain if mm.label == m.label]
        options = prior[:1] if prior else range(m.n_groups)
        return sum(walk(k + 1, chain + [(m, g)]) for g in options)

    return float(walk(0, []))


def h_commutativity(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    x0 = ctx.states[r["state"]] if "state" in r else None
    out = diagnostics.classical_commutativity(ctx.measurements[r["a"]], ctx.measurements[r["b"]], x0,
                                              ctx.agent(r.get("agent"), ""))
    out["reciprocity_residual"] = diagnostics.reciprocity_residual(
        ctx.measurements[r["a"]], ctx.measurements[r["b"]], ctx.agent(r.get("agent"), ""))
    out["tolerance"] = EXACT_TOL
    return out


def h_qtest(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    a, b = ctx.measurements[r["a"]], ctx.measurements[r["b"]]
    ag = ctx.agent(r.get("agent"), "")
    rep = diagnostics.q_test(a, b, ctx.states[r["state"]], ag)
    out = rep.to_dict()
    out["tolerance"] = EXACT_TOL
    da, db = ag.density_for(a), ag.density_for(b)
    if isinstance(da, Density1D) and isinstance(db, Density1D):
        cos = float(a.simplex.vertices[0] @ b.simplex.vertices[0])
        out["q1_integral"] = diagnostics.q1_integral(da, db, cos)
        out["symmetric_densities"] = da.is_symmetric() and db.is_symmetric()
    if r.get("mc"):
        n = run.trials(r)
        f, se = _freq(run.mc(_mc_qtest, i, r, n), n)
        q_mc = float(f[0] + f[1] - f[2] - f[3])
        sig = float(np.sqrt(np.sum(se ** 2)))
        out["mc"] = {"q": q_mc, "se": sig, "trials": n, "z": abs(q_mc - rep.q) / sig if sig > 0 else
                     (0.0 if q_mc == rep.q else math.inf)}
    return out


def h_witness(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    a, b, c = (ctx.measurements[r[k]] for k in "abc")
    va, vb, vc = (m.simplex.vertices[0] for m in (a, b, c))
    p_c_mb = float(b.probabilities(vc)[1])
    p_a_mc = float(c.probabilities(va)[1])
    p_a_mb = float(b.probabilities(va)[1])
    bound = bloch.max_quantum_transition(p_c_mb, p_a_mc)
    out = {"P(c->-b)": p_c_mb, "P(a->-c)": p_a_mc, "P(a->-b)": p_a_mb, "quantum_bound": bound,
           "violates_resolution_identity": bool(p_a_mb > bound + 1e-12), "tolerance": 1e-12}
    if va.size <= 3:
        pad = lambda v: np.pad(v, (0, 3 - v.size))
        psi = {k: bloch.qubit_state(pad(v)) for k, v in (("a", va), ("-b", -vb), ("c", vc))}
        out["resolution_identity_residual"] = bloch.resolution_identity_residual(psi["a"], psi["-b"], psi["c"])
        out["born"] = {"P(c->-b)": 0.5 * (1 - vc @ vb), "P(a->-c)": 0.5 * (1 - va @ vc),
                       "P(a->-b)": 0.5 * (1 - va @ vb)}
    return out


def h_degeneracy(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    m = ctx.measurements[r["measurement"]]
    x = ctx.states[r["state"]]
    parent = Measurement(m.simplex, m.density, label=m.label)
    fused = m.probabilities(x)
    parts = parent.probabilities(x)
    sums = np.array([parts[list(g)].sum() for g in m.groups])
    out = {"fused": fused, "constituents": parts, "sum_residual": float(np.max(np.abs(fused - sums))),
           "groups": [list(g) for g in m.groups], "degeneracy": m.degeneracy, "tolerance": EXACT_TOL}
    if m.degeneracy == "second":
        excluded, norms, states = 0.0, [], {}
        for gi, g in enumerate(m.groups):
            if len(g) == 1 or fused[gi] <= 0:
                continue
            s = m.group_state(x, gi)
            p = parent.probabilities(s)
            mask = np.ones(len(p), bool)
            mask[list(g)] = False
            excluded = max(excluded, float(p[mask].max()) if mask.any() else 0.0)
            norms.append(float(np.linalg.norm(s)))
            states[str(gi)] = s
        out.update(excluded_outcome_probability=excluded, fused_state_norms=norms, fused_states=states)
    return out


def h_region_areas(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    m = ctx.measurements[r["measurement"]]
    if not isinstance(m.density, Uniform) and m.density.kind != "uniform":
        raise ValueError("region_areas compares against uniform membranes only")
    bx = barycentric_of(m.simplex, project_onto(m.simplex, ctx.states[r["state"]]))
    n = int(r.get("samples", 10 ** 6))
    f, se = _freq(run.mc(_mc_regions, i, r, n), n)
    return {"barycentric": bx, "area_fractions": f, "se": se, "samples": n, "max_z": _max_z(f, bx, n)}


def h_universal(run: Runner, i: int, r: dict) -> dict:
    g = rngmod.stream(run.seed, r["id"]) if run.seed is not None else None
    sampled = int(round(r["sampled_n"])) if r.get("sampled_n") else None
    return diagnostics.universal_average_study(
        r["cos"], [int(round(n)) for n in r["n"]], sampled, int(r.get("membranes", 10_000)), g,
        r.get("k3"), r.get("state3"))


def h_ensemble(run: Runner, i: int, r: dict) -> dict:
    return diagnostics.ensemble_symmetry_study(r["eps"], r["cos_theta"], r["cos_theta_a"], r.get("cos_theta_b"))


def _dims(r):
    return [d if isinstance(d, int) else tuple(d) for d in r["dims"]]


def h_born(run: Runner, i: int, r: dict) -> dict:
    g = rngmod.stream(run.seed, r["id"])
    rows = []
    for n in _dims(r):
        err = dec = pur = 0.0
        for k in range(r["count"]):
            for d in (bloch.random_pure(n, g), bloch.random_mixed(n, g, rank=int(g.integers(1, n + 1)))):
                u = bloch.random_unitary(n, g)
                ps = bloch.basis_projectors(u)
                err = max(err, float(np.max(np.abs(bloch.gtr_uniform_probabilities(d, ps) - bloch.born_probabilities(d, ps)))))
                dec = max(dec, bloch.decohere_check(d, ps)[1])
                x = bloch.to_bloch(d)
                pur = max(pur, abs(float(x @ x) - bloch.purity_norm2(d)))
        rows.append({"n": n, "states": 2 * r["count"], "max_born_error": err, "max_decoherence_residual": dec,
                     "max_purity_residual": pur})
    luders = 0.0
    for k in range(r["count"]):
        u = bloch.random_unitary(3, g)
        ps = bloch.basis_projectors(u)
        d = bloch.random_pure(3, g)
        m = bloch.fused_measurement(ps, [(0, 1), (2,)], unitary=u)
        if np.trace(d @ (ps[0] + ps[1])).real <= 1e-12:
            continue
        engine = m.group_state(bloch.to_bloch(d), 0)
        luders = max(luders, float(np.max(np.abs(engine - bloch.to_bloch(bloch.luders_post_state(d, ps, (0, 1)))))))
    return {"rows": rows, "max_born_error": max(x["max_born_error"] for x in rows),
            "max_decoherence_residual": max(x["max_decoherence_residual"] for x in rows),
            "max_luders_residual": luders, "generator_basis": bloch.GENERATOR_TAG, "tolerance": EXACT_TOL}


def h_qq(run: Runner, i: int, r: dict) -> dict:
    g = rngmod.stream(run.seed, r["id"])
    rows = []
    for n in _dims(r):
        worst = worst_q = 0.0
        ranks = set()
        for _ in range(r["count"]):
            ra, rb = (int(g.integers(1, n)) if n > 2 else 1 for _ in range(2))
            ranks.update((ra, rb))
            pa, pb = bloch.random_projector(n, ra, g), bloch.random_projector(n, rb, g)
            worst = max(worst, float(np.max(np.abs(bloch.qq_operator(pa, pb)))))
            worst_q = max(worst_q, abs(bloch.qq_value(pa, pb, bloch.random_mixed(n, g))))
        rows.append({"n": n, "pairs": r["count"], "max_abs_Q": worst, "max_abs_q": worst_q, "ranks": sorted(ranks)})
    return {"rows": rows, "max_abs_Q": max(x["max_abs_Q"] for x in rows), "tolerance": 1e-12}


def h_bipartite(run: Runner, i: int, r: dict) -> dict:
    g = rngmod.stream(run.seed, r["id"])
    rows = []
    for dims in _dims(r):
        na, nb = dims
        prod = 0.0
        ent = math.inf
        for _ in range(r["count"]):
            d = np.kron(bloch.random_mixed(na, g), bloch.random_mixed(nb, g))
            prod = max(prod, bloch.product_residual(d, na, nb))
            e = bloch.random_pure(na * nb, g)
            ent = min(ent, bloch.product_residual(e, na, nb))
        da, db = bloch.direct_sum_coefficients(na, nb)
        rows.append({"dims": [na, nb], "d_a": da, "d_b": db, "max_product_residual": prod,
                     "min_entangled_residual": ent})
    bell = np.zeros(4, complex)
    bell[0] = bell[3] = 1 / math.sqrt(2)
    xa, xb, xc, _, _ = bloch.bipartite_decompose(bloch.projector(bell), 2, 2)
    return {"rows": rows, "max_product_residual": max(x["max_product_residual"] for x in rows),
            "min_entangled_residual": min(x["min_entangled_residual"] for x in rows),
            "bell": {"norm_x_a": float(np.linalg.norm(xa)), "norm_x_b": float(np.linalg.norm(xb)),
                     "norm_x_corr": float(np.linalg.norm(xc))},
            "tolerance": EXACT_TOL}


def h_product(run: Runner, i: int, r: dict) -> dict:
    ctx = run.ctx
    ma, mb = ctx.measurements[r["a"]], ctx.measurements[r["b"]]
    xa, xb = (ctx.states[s] for s in r["states"])
    pm = ProductMeasurement(ma, mb)
    joint = pm.probabilities((xa, xb))
    ma_, mb_ = pm.marginals(joint)
    out = {"joint": joint, "marginal_a": ma_, "marginal_b": mb_,
           "marginal_residual": float(max(np.max(np.abs(ma_ - ma.probabilities(xa))),
                                          np.max(np.abs(mb_ - mb.probabilities(xb))))),
           "tolerance": EXACT_TOL}
    if r.get("mc"):
        n = run.trials(r)
        counts = run.mc(_mc_product, i, r, n)
        fab, seab = _freq(counts[0], n)
        fba, seba = _freq(counts[1], n)
        out["mc"] = {"trials": n, "ab": fab, "ba": fba, "se_ab": seab, "se_ba": seba,
                     "max_z_order": _max_z_pair(fab, fba, n),
                     "max_z_exact": max(_max_z(fab, joint, n), _max_z(fba, joint, n))}
    return out


HANDLERS = {
    "probabilities": h_probabilities,
    "sequence": h_sequence,
    "replicability": h_replicability,
    "commutativity": h_commutativity,
    "q_test": h_qtest,
    "witness": h_witness,
    "degeneracy": h_degeneracy,
    "region_areas": h_region_areas,
    "universal_average": h_universal,
    "ensemble": h_ensemble,
    "born_check": h_born,
    "qq_check": h_qq,
    "bipartite": h_bipartite,
    "product": h_product,
}


# -- expectations -------------------------------------------------------------

def lookup(obj, path: str):
    """Follow a dotted path; integer segments index lists."""
    cur = obj
    for part in path.split("."):
        if isinstance(cur, dict):
            if part not in cur:
                raise KeyError(path)
            cur = cur[part]
        elif isinstance(cur, (list, tuple, np.ndarray)):
            cur = cur[int(part)]
        else:
            raise KeyError(path)
    return cur


def check_expectation(result: dict, exp: dict) -> dict:
    rec = {"path": exp["path"]}
    try:
        actual = lookup(result, exp["path"])
    except (KeyError, IndexError, ValueError):
        return {**rec, "passed": False, "error": "path not found"}
    rec["actual"] = actual
    if "is" in exp:
        ok = bool(actual) is exp["is"] and isinstance(actual, (bool, np.bool_))
        rec["check"] = f"is {exp['is']}"
    elif "equals" in exp:
        target = float(exp["equals"])
        if "se_path" in exp:
            se = float(lookup(result, exp["se_path"]))
            k = float(exp.get("k", diagnostics.SIGMA_K))
            ok = abs(float(actual) - target) <= k * se
            rec["check"] = f"within {k} sigma of {target!r}"
        else:
            tol = float(exp.get("tol", EXACT_TOL))
            ok = abs(float(actual) - target) <= tol
            rec["check"] = f"equals {target!r} +/- {tol!r}"
    elif "lt" in exp:
        ok = float(actual) < float(exp["lt"])
        rec["check"] = f"< {float(exp['lt'])!r}"
    else:
        ok = float(actual) > float(exp["gt"])
        rec["check"] = f"> {float(exp['gt'])!r}"
    rec["passed"] = bool(ok)
    return rec


# -- running ------------------------------------------------------------------

def execute(doc: dict, workers: int = 1, trace: bool = False) -> dict:
    """Run every request of a loaded scenario and evaluate its expectations."""
    ctx = build_context(doc)
    doc_json = json.dumps(doc, sort_keys=True)
    runner = Runner(ctx, doc_json, doc.get("seed"), workers, trace)
    results = {}
    checks = []
    for i, req in enumerate(doc["requests"]):
        res = to_jsonable(HANDLERS[req["kind"]](runner, i, req))
        res["kind"] = req["kind"]
        results[req["id"]] = res
        for exp in req.get("expect", []):
            checks.append({"request": req["id"], **to_jsonable(check_expectation(res, exp))})
    return {
        "format": RESULT_VERSION,
        "provenance": {"seed": doc.get("seed"), "build": __version__, "scenario_version": doc["version"],
                       "generator_basis": bloch.GENERATOR_TAG, "block_size": rngmod.BLOCK_SIZE},
        "results": results,
        "expectations": checks,
        "passed": all(c["passed"] for c in checks),
    }


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            # row-major interleaved real/imaginary parts
            return [float(v) for z in obj.ravel() for v in (z.real, z.imag)]
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return v
    return obj


def dumps_json(result: dict) -> str:
    return json.dumps(result, sort_keys=True, indent=2) + "\n"


def flatten(obj, prefix: str = "") -> dict:
    out = {}
    if isinstance(obj, dict):
        for k in sorted(obj):
            out.update(flatten(obj[k], f"{prefix}.{k}" if prefix else str(k)))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(flatten(v, f"{prefix}.{i}"))
    else:
        out[prefix] = obj
    return out


def dumps_csv(result: dict) -> str:
    """Flat table: one row per (request, field)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["request", "field", "value"])
    for rid, res in result["results"].items():
        for k, v in flatten(res).items():
            w.writerow([rid, k, repr(v) if isinstance(v, float) else v])
    for c in result["expectations"]:
        w.writerow([c["request"], f"expect:{c['path']}", c["passed"]])
    return buf.getvalue()


def sweep(text: str, param: str, start: float, stop: float, steps: int, workers: int = 1) -> str:
    """Run a template for each grid value of ``param``; one CSV row per value."""
    doc = parse_text(text)
    validate(doc)
    if steps < 1:
        raise ScenarioError("steps must be at least 1", "--steps")
    values = np.linspace(start, stop, steps) if steps > 1 else np.array([start])
    if param == "n":
        values = np.unique(np.round(values).astype(int))
    rows = []
    for v in values:
        d = json.loads(json.dumps(doc))
        d.setdefault("params", {})[param] = int(v) if param == "n" else float(v)
        res = execute(load(json.dumps(d)), workers)
        row = {param: d["params"][param], "passed": res["passed"]}
        for rid, r in res["results"].items():
            row.update({f"{rid}.{k}": val for k, val in flatten(r).items()})
        rows.append(row)
    cols = [param, "passed"] + sorted({k for r in rows for k in r} - {param, "passed"})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()
