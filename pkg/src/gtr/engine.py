"""Running measurements: projection, collapse, purification and sequences."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .membranes import (
    BreakPoint,
    DensityError,
    Epsilon,
    MembraneDensity,
    RegionIntegral,
    density_piecewise,
)
from .simplex import Simplex, band, barycentric_of, project_onto, regions_of

NO_UPDATE = "none"
REPLICABILITY_LOCK = "replicability-lock"
LOCK_WIDTH = 0.05


class MeasurementError(ValueError):
    pass


class UnsatisfiableLock(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Measurement:
    """A simplex with its membrane density and optional outcome fusion.

    ``groups`` partitions the outcome indices; singletons are ordinary
    outcomes.  With ``degeneracy="first"`` fused outcomes are only relabelled;
    with ``"second"`` a fused collapse lands on the face spanned by the group
    and is then purified back to the unit sphere.

    ``purification_axes`` optionally restricts, per group index, the
    directions (orthonormal rows) along which the purification stage may move
    the state.  Without it the whole complement of the membrane plane is used.
    """

    simplex: Simplex
    density: MembraneDensity
    groups: tuple[tuple[int, ...], ...] | None = None
    degeneracy: str = "first"
    label: str = ""
    purification_axes: Mapping[int, np.ndarray] | None = None

    def __post_init__(self):
        n = self.simplex.n_outcomes
        groups = self.groups
        if groups is None:
            groups = tuple((i,) for i in range(n))
        groups = tuple(tuple(int(i) for i in g) for g in groups)
        flat = sorted(i for g in groups for i in g)
        if flat != list(range(n)) or any(len(g) == 0 for g in groups):
            raise MeasurementError(f"groups must partition outcomes 0..{n - 1}, got {groups}")
        if self.degeneracy not in ("first", "second"):
            raise MeasurementError("degeneracy must be 'first' or 'second'")
        if self.degeneracy == "second" and all(len(g) == 1 for g in groups):
            raise MeasurementError("second-type degeneracy needs a fused group")
        self.density.check_simplex(self.simplex)
        object.__setattr__(self, "groups", groups)
        lookup = np.empty(n, dtype=int)
        for gi, g in enumerate(groups):
            lookup[list(g)] = gi
        object.__setattr__(self, "_group_of", lookup)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_of(self, outcome: int) -> int:
        return int(self._group_of[outcome])

    def outcome_report(self, x, density: MembraneDensity | None = None, rng=None) -> RegionIntegral:
        """Per-group probabilities with error bars and flags."""
        density = density or self.density
        xp = project_onto(self.simplex, x)
        bx = barycentric_of(self.simplex, xp)
        res = density.integrate(bx, rng=rng)
        probs = np.array([res.probs[list(g)].sum() for g in self.groups])
        se = None
        if res.stderr is not None:
            se = np.array([np.sqrt(np.sum(res.stderr[list(g)] ** 2)) for g in self.groups])
        return RegionIntegral(probs, se, res.exact, res.flags)

    def probabilities(self, x, density: MembraneDensity | None = None, rng=None) -> np.ndarray:
        return self.outcome_report(x, density, rng).probs

    def landing_point(self, x_par: np.ndarray, group: int) -> np.ndarray:
        """Point on the face of a fused group reached by the collapse.

        Barycentric weights outside the group are dropped and the rest
        renormalised.
        """
        g = list(self.groups[group])
        b = barycentric_of(self.simplex, x_par)
        w = np.zeros_like(b)
        if b[g].sum() <= 0:
            w[g] = 1.0 / len(g)
        else:
            w[g] = b[g] / b[g].sum()
        return w @ self.simplex.vertices

    def purify(self, x, x_par, landing, group: int) -> tuple[np.ndarray, np.ndarray | None]:
        """Move ``landing`` orthogonally to the membrane until unit norm."""
        axes = None
        if self.purification_axes is not None:
            axes = self.purification_axes.get(group)
        if axes is None:
            axes = self.simplex.normal_basis()
        axes = np.atleast_2d(axes)
        if axes.size == 0:
            return landing, None
        perp = np.asarray(x, dtype=float) - x_par
        comp = axes.T @ (axes @ perp)
        norm = np.linalg.norm(comp)
        u = comp / norm if norm > 1e-12 else axes[0]
        s = np.sqrt(max(0.0, 1.0 - float(landing @ landing)))
        return landing + s * u, u

    def outcome_state(self, x, outcome: int) -> np.ndarray:
        """Final state once the membrane has collapsed toward ``outcome``."""
        gi = self.group_of(outcome)
        g = self.groups[gi]
        if len(g) == 1 or self.degeneracy == "first":
            return self.simplex.vertices[outcome].copy()
        xp = project_onto(self.simplex, x)
        return self.purify(x, xp, self.landing_point(xp, gi), gi)[0]

    def group_state(self, x, group: int) -> np.ndarray:
        """Final state for a group outcome (second type or singleton)."""
        return self.outcome_state(x, self.groups[group][0])


@dataclass(frozen=True)
class OutcomeRecord:
    group: int
    outcome: int
    final_state: np.ndarray
    breakpoint: BreakPoint
    trace: dict = field(default_factory=dict)


def outcome_probabilities(m, x, density: MembraneDensity | None = None) -> np.ndarray:
    return m.probabilities(x, density)


def _draw(m: Measurement, density: MembraneDensity, bx: np.ndarray, size: int, rng):
    # breaking points and winning outcomes; atoms exactly at the state are redrawn
    w, atomic = density.sample(m.simplex.n_outcomes, size, rng)
    if atomic.any():
        bad = atomic & np.all(w == bx, axis=1)
        tries = 0
        while bad.any():
            tries += 1
            if tries > 1000:
                raise DensityError("membrane only breaks at the state itself")
            w2, a2 = density.sample(m.simplex.n_outcomes, int(bad.sum()), rng)
            w[bad], atomic[bad] = w2, a2
            bad = atomic & np.all(w == bx, axis=1)
    return w, atomic, regions_of(bx, w)


def run_measurement(m: Measurement, x, rng: np.random.Generator,
                    density: MembraneDensity | None = None) -> OutcomeRecord:
    """One realisation of the measurement on state ``x``."""
    density = density or m.density
    x = np.asarray(x, dtype=float)
    xp = project_onto(m.simplex, x)
    bx = barycentric_of(m.simplex, xp)
    w, atomic, outcome = _draw(m, density, bx, 1, rng)
    outcome = int(outcome[0])
    gi = m.group_of(outcome)
    trace = {"state": x, "on_membrane": xp}
    if len(m.groups[gi]) > 1 and m.degeneracy == "second":
        landing = m.landing_point(xp, gi)
        final, direction = m.purify(x, xp, landing, gi)
        trace["landing"] = landing
        trace["purified"] = final
        trace["purify_direction"] = direction
    else:
        final = m.simplex.vertices[outcome].copy()
    bp = BreakPoint(w[0], "atomic" if atomic[0] else "continuous")
    return OutcomeRecord(gi, outcome, final, bp, trace)


def sample_groups(m: Measurement, x, size: int, rng: np.random.Generator,
                  density: MembraneDensity | None = None) -> np.ndarray:
    """Vectorised group outcomes of ``size`` independent runs on ``x``."""
    density = density or m.density
    xp = project_onto(m.simplex, x)
    bx = barycentric_of(m.simplex, xp)
    _, _, outcome = _draw(m, density, bx, size, rng)
    return m._group_of[outcome]


# -- agents and update strategies ------------------------------------------

@dataclass(frozen=True)
class Agent:
    """Owner of per-measurement densities and an update strategy.

    Agents are immutable: :meth:`after` returns the updated agent.
    """

    id: str = "default"
    densities: Mapping[str, MembraneDensity] = field(default_factory=dict)
    strategy: str = NO_UPDATE

    def __post_init__(self):
        if self.strategy not in (NO_UPDATE, REPLICABILITY_LOCK):
            raise MeasurementError(f"unknown update strategy {self.strategy!r}")

    def density_for(self, m: Measurement) -> MembraneDensity:
        return self.densities.get(m.label, m.density)

    def after(self, m: Measurement, outcome: int, others: Sequence[Measurement]) -> "Agent":
        if self.strategy == NO_UPDATE:
            return self
        new = dict(self.densities)
        new[m.label] = lock_density(m, outcome, others)
        return replace(self, densities=new)


def lock_density(m: Measurement, outcome: int, others: Sequence[Measurement]) -> MembraneDensity:
    """Band density that returns ``outcome`` for every state the others can produce.

    The support is an interval of width at most ``LOCK_WIDTH`` placed midway
    between the far end of the band and the largest projection of the other
    measurements' outcome states, on the winning side of all of them.
    """
    if m.simplex.n_outcomes != 2:
        raise UnsatisfiableLock("replicability lock is defined for two-outcome measurements")
    axis = m.simplex.vertices[0]
    proj = [abs(float(v @ axis)) for o in others if o.label != m.label for v in o.simplex.vertices]
    reach = max(proj, default=0.0)
    gap = 1.0 - reach
    if gap <= 1e-12:
        raise UnsatisfiableLock(f"no breakable support can lock outcome {outcome} of {m.label!r}")
    width = min(LOCK_WIDTH, gap / 2)
    centre = -(1.0 + reach) / 2 if outcome == 0 else (1.0 + reach) / 2
    return density_piecewise([centre - width / 2, centre + width / 2], [1.0])


def _others(chain_measurements: Sequence[Measurement], m: Measurement) -> list[Measurement]:
    return [o for o in chain_measurements if o.label != m.label]


def sequential_probability(chain: Sequence[tuple[Measurement, int]], x0, agent: Agent | None = None) -> float:
    """Probability of obtaining each target group in turn, starting from ``x0``.

    Transition probabilities multiply through the realised outcome states.
    First-type fused outcomes branch over their constituent vertices, so
    update strategies see the actual vertex reached.
    """
    agent = agent or Agent()
    measurements = [m for m, _ in chain]

    def walk(k: int, x, ag: Agent) -> float:
        if k == len(chain):
            return 1.0
        m, target = chain[k]
        dens = ag.density_for(m)
        p = m.probabilities(x, dens)[target]
        if p == 0.0:
            return 0.0
        g = m.groups[target]
        if len(g) > 1 and m.degeneracy == "first":
            xp = project_onto(m.simplex, x)
            bx = barycentric_of(m.simplex, xp)
            res = dens.integrate(bx).probs
            total = 0.0
            for i in g:
                if res[i] > 0:
                    total += res[i] * walk(k + 1, m.simplex.vertices[i], ag.after(m, i, _others(measurements, m)))
            return total
        nxt = m.outcome_state(x, g[0])
        return p * walk(k + 1, nxt, ag.after(m, g[0], _others(measurements, m)))

    return walk(0, np.asarray(x0, dtype=float), agent)


def run_sequence(chain: Sequence[Measurement], x0, agent: Agent | None, rng: np.random.Generator,
                 trace: bool = False) -> tuple[list[OutcomeRecord], Agent]:
    """Sample one trajectory through ``chain``; returns records and the final agent."""
    agent = agent or Agent()
    x = np.asarray(x0, dtype=float)
    records = []
    for m in chain:
        rec = run_measurement(m, x, rng, agent.density_for(m))
        agent = agent.after(m, rec.outcome, _others(chain, m))
        if not trace:
            rec = replace(rec, trace={})
        records.append(rec)
        x = rec.final_state
    return records, agent


def ensemble_probability(agents: Sequence[Agent], chain: Sequence[tuple[Measurement, int]], x0) -> float:
    """Uniform average of the individual sequential probabilities."""
    if not agents:
        raise MeasurementError("ensemble needs at least one agent")
    return float(np.mean([sequential_probability(chain, x0, a) for a in agents]))


# -- composite entities ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProductMeasurement:
    """Separable measurement of a two-part entity acting on product states.

    States are pairs ``(x_a, x_b)``; outcome ``i * n_b + j`` means outcome
    ``i`` on the first part and ``j`` on the second.
    """

    first: Measurement
    second: Measurement

    def __post_init__(self):
        for m in (self.first, self.second):
            if any(len(g) > 1 for g in m.groups):
                raise MeasurementError("product measurements need non-degenerate factors")

    @property
    def n_groups(self) -> int:
        return self.first.n_groups * self.second.n_groups

    def probabilities(self, state, density=None) -> np.ndarray:
        xa, xb = state
        return np.outer(self.first.probabilities(xa), self.second.probabilities(xb)).ravel()

    def marginals(self, joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        j = np.asarray(joint).reshape(self.first.n_groups, self.second.n_groups)
        return j.sum(axis=1), j.sum(axis=0)

    def run(self, state, rng: np.random.Generator, order: str = "ab") -> tuple[int, tuple]:
        xa, xb = state
        if order == "ab":
            ra = run_measurement(self.first, xa, rng)
            rb = run_measurement(self.second, xb, rng)
        elif order == "ba":
            rb = run_measurement(self.second, xb, rng)
            ra = run_measurement(self.first, xa, rng)
        else:
            raise MeasurementError("order must be 'ab' or 'ba'")
        return ra.group * self.second.n_groups + rb.group, (ra.final_state, rb.final_state)

    def sample(self, state, size: int, rng: np.random.Generator, order: str = "ab") -> np.ndarray:
        xa, xb = state
        if order == "ab":
            ga = sample_groups(self.first, xa, size, rng)
            gb = sample_groups(self.second, xb, size, rng)
        else:
            gb = sample_groups(self.second, xb, size, rng)
            ga = sample_groups(self.first, xa, size, rng)
        return ga * self.second.n_groups + gb


def product_measurement(ma: Measurement, mb: Measurement) -> ProductMeasurement:
    return ProductMeasurement(ma, mb)


def epsilon_band(axis, eps: float, label: str = "") -> Measurement:
    """Convenience: two-outcome measurement along ``axis`` with an eps-band."""
    return Measurement(band(axis), Epsilon(eps), label=label)
