"""Boolean structural causal models over condensed workflows.

Each node v carries a conditional Bernoulli mechanism p(v=1 | parent
assignment) and a uniform threshold noise variable u_v in [0,1):
v = 1 iff u_v < p(v=1 | pa). The threshold representation makes mechanisms
invertible, which is what abduction-based counterfactuals need.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .workflow import Workflow

MAX_PARENTS = 20  # 2^k CPT rows; anything larger is a modelling error


@dataclass(frozen=True)
class BooleanScm:
    """Nodes in topological order; cpt[v] maps full parent assignments to p(v=1)."""

    nodes: tuple[str, ...]
    parents: dict[str, tuple[str, ...]]
    cpt: dict[str, dict[tuple[bool, ...], float]]

    def __post_init__(self):
        seen: set[str] = set()
        for v in self.nodes:
            for p in self.parents[v]:
                if p not in seen:
                    raise ValueError(f"nodes are not topologically ordered at {v}<-{p}")
            seen.add(v)
            k = len(self.parents[v])
            if k > MAX_PARENTS:
                raise ValueError(f"node {v} has {k} parents")
            table = self.cpt[v]
            if len(table) != 2 ** k:
                raise ValueError(f"cpt of {v} does not cover all {2 ** k} parent assignments")
            for pa, p in table.items():
                if len(pa) != k or not (0.0 <= p <= 1.0):
                    raise ValueError(f"bad cpt entry for {v}: {pa} -> {p}")

    def prob(self, node: str, parent_values: tuple[bool, ...]) -> float:
        return self.cpt[node][parent_values]

    @property
    def roots(self) -> tuple[str, ...]:
        return tuple(v for v in self.nodes if not self.parents[v])

    def root_marginal(self, node: str) -> float:
        return self.cpt[node][()]

    def descendants(self, node: str) -> set[str]:
        children: dict[str, list[str]] = {v: [] for v in self.nodes}
        for v in self.nodes:
            for p in self.parents[v]:
                children[p].append(v)
        out: set[str] = set()
        stack = list(children[node])
        while stack:
            cur = stack.pop()
            if cur not in out:
                out.add(cur)
                stack.extend(children[cur])
        return out

    def ancestors_of(self, node: str) -> set[str]:
        out: set[str] = set()
        stack = list(self.parents[node])
        while stack:
            cur = stack.pop()
            if cur not in out:
                out.add(cur)
                stack.extend(self.parents[cur])
        return out


@dataclass(frozen=True)
class WorldSample:
    values: dict[str, bool]
    noise: dict[str, float]


def make_scm(parents: Mapping[str, Sequence[str]],
             cpt: Mapping[str, Mapping[tuple[bool, ...], float]]) -> BooleanScm:
    """Build an SCM from unordered parent/CPT maps (topological order derived)."""
    nodes = list(parents)
    order: list[str] = []
    placed: set[str] = set()
    while len(order) < len(nodes):
        progress = False
        for v in nodes:
            if v not in placed and all(p in placed for p in parents[v]):
                order.append(v)
                placed.add(v)
                progress = True
        if not progress:
            raise ValueError("parent relation contains a cycle")
    return BooleanScm(
        nodes=tuple(order),
        parents={v: tuple(parents[v]) for v in order},
        cpt={v: dict(cpt[v]) for v in order},
    )


# ---------------------------------------------------------------------------
# fitting

def fit(graph: Workflow | Mapping[str, Sequence[str]],
        observations: Sequence[Mapping[str, bool]],
        alpha: float = 1.0) -> BooleanScm:
    """Estimate mechanisms as Laplace-smoothed conditional frequency tables.

    Parent assignments never observed fall back to the node's smoothed
    marginal. Every node needs at least one observation.
    """
    if isinstance(graph, Workflow):
        parent_map: dict[str, tuple[str, ...]] = {
            sid: graph.parent_map[sid] for sid in graph.step_ids}
    else:
        parent_map = {v: tuple(ps) for v, ps in graph.items()}

    cpt: dict[str, dict[tuple[bool, ...], float]] = {}
    for node, parents in parent_map.items():
        ones = 0
        total = 0
        by_pa: dict[tuple[bool, ...], list[int]] = {}
        for obs in observations:
            if node not in obs:
                continue
            ones += int(bool(obs[node]))
            total += 1
            if all(p in obs for p in parents):
                pa = tuple(bool(obs[p]) for p in parents)
                cell = by_pa.setdefault(pa, [0, 0])
                cell[0] += int(bool(obs[node]))
                cell[1] += 1
        if total == 0:
            raise ValueError(f"node {node} has no observations")
        marginal = (ones + alpha) / (total + 2 * alpha)
        table: dict[tuple[bool, ...], float] = {}
        for pa in itertools.product((False, True), repeat=len(parents)):
            if pa in by_pa:
                c1, c = by_pa[pa]
                table[pa] = (c1 + alpha) / (c + 2 * alpha)
            else:
                table[pa] = marginal
        cpt[node] = table
    return make_scm(parent_map, cpt)


# ---------------------------------------------------------------------------
# sampling

def _sample_arrays(scm: BooleanScm, n: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral samples: (values, noise) as (n, |nodes|) arrays in node order."""
    idx = {v: i for i, v in enumerate(scm.nodes)}
    noise = rng.random((n, len(scm.nodes)))
    values = np.zeros((n, len(scm.nodes)), dtype=bool)
    for v in scm.nodes:
        parents = scm.parents[v]
        if parents:
            code = np.zeros(n, dtype=np.int64)
            for j, p in enumerate(parents):
                code |= values[:, idx[p]].astype(np.int64) << j
            table = np.empty(2 ** len(parents))
            for pa, p in scm.cpt[v].items():
                table[sum(int(b) << j for j, b in enumerate(pa))] = p
            threshold = table[code]
        else:
            threshold = scm.cpt[v][()]
        values[:, idx[v]] = noise[:, idx[v]] < threshold
    return values, noise


def sample(scm: BooleanScm, n: int, seed: int) -> list[WorldSample]:
    if n < 1:
        raise ValueError("n must be >= 1")
    values, noise = _sample_arrays(scm, n, np.random.default_rng(seed))
    return [
        WorldSample(
            values={v: bool(values[i, j]) for j, v in enumerate(scm.nodes)},
            noise={v: float(noise[i, j]) for j, v in enumerate(scm.nodes)},
        )
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# interventions

def intervene(scm: BooleanScm, interventions: Mapping[str, bool]) -> BooleanScm:
    """do-operator: forced nodes become parentless constants."""
    unknown = set(interventions) - set(scm.nodes)
    if unknown:
        raise ValueError(f"unknown nodes: {sorted(unknown)}")
    parents = dict(scm.parents)
    cpt = dict(scm.cpt)
    for node, value in interventions.items():
        parents[node] = ()
        cpt[node] = {(): 1.0 if value else 0.0}
    return BooleanScm(nodes=scm.nodes, parents=parents, cpt=cpt)


# ---------------------------------------------------------------------------
# exact inference

def _marginal_by_elimination(scm: BooleanScm, target: str,
                             prob_fn=None) -> float:
    """P(target=1) by frontier dynamic programming over the target's ancestors.

    `prob_fn(node, parent_values) -> p` defaults to the SCM mechanisms; the
    counterfactual query swaps in posterior-noise push-forward probabilities.
    """
    if prob_fn is None:
        prob_fn = scm.prob
    relevant = scm.ancestors_of(target) | {target}
    order = [v for v in scm.nodes if v in relevant]
    pos = {v: i for i, v in enumerate(order)}
    last_needed = {v: pos[v] for v in order}
    for v in order:
        for p in scm.parents[v]:
            last_needed[p] = max(last_needed[p], pos[v])

    live: list[str] = []
    states: dict[tuple[bool, ...], float] = {(): 1.0}
    for i, v in enumerate(order):
        pidx = [live.index(p) for p in scm.parents[v]]
        new_states: dict[tuple[bool, ...], float] = {}
        for assign, prob in states.items():
            pa = tuple(assign[j] for j in pidx)
            p1 = prob_fn(v, pa)
            for value, pv in ((True, p1), (False, 1.0 - p1)):
                key = assign + (value,)
                new_states[key] = new_states.get(key, 0.0) + prob * pv
        live.append(v)
        keep = [j for j, node in enumerate(live)
                if last_needed[node] > i or node == target]
        if len(keep) != len(live):
            projected: dict[tuple[bool, ...], float] = {}
            for assign, prob in new_states.items():
                key = tuple(assign[j] for j in keep)
                projected[key] = projected.get(key, 0.0) + prob
            new_states = projected
            live = [live[j] for j in keep]
        states = new_states

    t = live.index(target)
    return sum(prob for assign, prob in states.items() if assign[t])


def exact_marginal(scm: BooleanScm, target: str) -> float:
    return _marginal_by_elimination(scm, target)


def ace(scm: BooleanScm, x: str, y: str, method: str = "exact",
        n: int = 100_000, seed: int = 0) -> float:
    """Average causal effect E[y | do(x=1)] - E[y | do(x=0)]."""
    if x == y:
        raise ValueError("x and y must differ")
    for node in (x, y):
        if node not in scm.nodes:
            raise ValueError(f"unknown node {node}")
    m1 = intervene(scm, {x: True})
    m0 = intervene(scm, {x: False})
    if method == "exact":
        return exact_marginal(m1, y) - exact_marginal(m0, y)
    if method == "monte-carlo":
        # common random numbers: one noise draw pushed through both models
        rng = np.random.default_rng(seed)
        idx = {v: i for i, v in enumerate(scm.nodes)}
        noise = rng.random((n, len(scm.nodes)))
        outcomes = []
        for model in (m1, m0):
            values = np.zeros((n, len(scm.nodes)), dtype=bool)
            for v in model.nodes:
                parents = model.parents[v]
                if parents:
                    code = np.zeros(n, dtype=np.int64)
                    for j, p in enumerate(parents):
                        code |= values[:, idx[p]].astype(np.int64) << j
                    table = np.empty(2 ** len(parents))
                    for pa, p in model.cpt[v].items():
                        table[sum(int(b) << j for j, b in enumerate(pa))] = p
                    threshold = table[code]
                else:
                    threshold = model.cpt[v][()]
                values[:, idx[v]] = noise[:, idx[v]] < threshold
            outcomes.append(values[:, idx[y]].astype(float))
        return float(np.mean(outcomes[0] - outcomes[1]))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# counterfactuals (abduction - action - prediction)

class InconsistentObservationError(ValueError):
    """The observed assignment contradicts a deterministic mechanism."""


def _abduction_intervals(scm: BooleanScm, observed: Mapping[str, bool],
                         clamp_eps: float | None) -> dict[str, tuple[float, float]]:
    """Posterior noise interval [a, b) per node given a complete observation."""
    intervals: dict[str, tuple[float, float]] = {}
    for v in scm.nodes:
        pa = tuple(bool(observed[p]) for p in scm.parents[v])
        p = scm.prob(v, pa)
        if clamp_eps is not None and (p <= 0.0 or p >= 1.0):
            p = min(max(p, clamp_eps), 1.0 - clamp_eps)
        if observed[v]:
            if p <= 0.0:
                raise InconsistentObservationError(
                    f"{v}=1 observed but its mechanism gives p(1|{pa})=0")
            intervals[v] = (0.0, p)
        else:
            if p >= 1.0:
                raise InconsistentObservationError(
                    f"{v}=0 observed but its mechanism gives p(1|{pa})=1")
            intervals[v] = (p, 1.0)
    return intervals


def counterfactual(scm: BooleanScm, observed: Mapping[str, bool],
                   interventions: Mapping[str, bool], target: str,
                   clamp_eps: float | None = None) -> float:
    """P(target=1) had `interventions` held, given the observed world.

    Abduction inverts the threshold noise (an interval per node given the
    complete observation), the action mutilates the model, and prediction
    pushes the posterior noise forward. `clamp_eps` loosens deterministic
    mechanisms to [eps, 1-eps] during abduction; by default an observation
    contradicting a deterministic mechanism is an error.
    """
    missing = [v for v in scm.nodes if v not in observed]
    if missing:
        raise ValueError(f"observation is incomplete, missing: {missing}")
    if target not in scm.nodes:
        raise ValueError(f"unknown node {target}")
    intervals = _abduction_intervals(scm, observed, clamp_eps)
    mutilated = intervene(scm, interventions)

    def pushforward(node: str, parent_values: tuple[bool, ...]) -> float:
        if node in interventions:
            return 1.0 if interventions[node] else 0.0
        a, b = intervals[node]
        t = scm.prob(node, parent_values)  # original mechanism, new parents
        overlap = max(0.0, min(b, t) - a)
        return overlap / (b - a)

    return _marginal_by_elimination(mutilated, target, prob_fn=pushforward)


def impute_with_marginals(scm: BooleanScm,
                          partial: Mapping[str, bool]) -> dict[str, bool]:
    """Majority-fill completion for partial observations (non-canonical helper:
    counterfactual queries are defined over complete observations)."""
    out = dict(partial)
    for v in scm.nodes:
        if v not in out:
            out[v] = exact_marginal(scm, v) >= 0.5
    return out


@dataclass(frozen=True)
class SearchEntry:
    interventions: dict[str, bool]
    p_target_true: float
    changed: int  # nodes forced away from their observed value


@dataclass(frozen=True)
class SearchResult:
    target: str
    factual_value: bool
    entries: tuple[SearchEntry, ...]  # sorted by flip probability, descending
    flips: tuple[SearchEntry, ...]  # minimal-cardinality entries past the threshold


def counterfactual_search(scm: BooleanScm, observed: Mapping[str, bool],
                          candidates: Sequence[str], target: str,
                          flip_threshold: float = 0.5,
                          max_candidates: int = 12,
                          clamp_eps: float | None = None) -> SearchResult:
    """Evaluate the counterfactual for every assignment of the candidate nodes.

    2^|candidates| entries; `flips` lists the interventions that move the
    target past `flip_threshold` away from its factual value, restricted to
    the smallest number of actually-changed nodes.
    """
    candidates = list(candidates)
    if len(candidates) > max_candidates:
        raise ValueError(
            f"{len(candidates)} candidate nodes exceed the bound of {max_candidates}")
    factual = bool(observed[target])
    entries = []
    for values in itertools.product((False, True), repeat=len(candidates)):
        iv = dict(zip(candidates, values))
        p = counterfactual(scm, observed, iv, target, clamp_eps=clamp_eps)
        changed = sum(1 for g, val in iv.items() if bool(observed[g]) != val)
        entries.append(SearchEntry(iv, p, changed))

    def flip_prob(e: SearchEntry) -> float:
        return (1.0 - e.p_target_true) if factual else e.p_target_true

    entries.sort(key=lambda e: (-flip_prob(e), sorted(e.interventions.items())))
    flipping = [e for e in entries if flip_prob(e) >= flip_threshold]
    if flipping:
        smallest = min(e.changed for e in flipping)
        flips = tuple(e for e in flipping if e.changed == smallest)
    else:
        flips = ()
    return SearchResult(target=target, factual_value=factual,
                        entries=tuple(entries), flips=flips)


# ---------------------------------------------------------------------------
# serialization

def _pa_key(pa: tuple[bool, ...]) -> str:
    return "".join("1" if b else "0" for b in pa)


def scm_to_dict(scm: BooleanScm, meta: Mapping | None = None) -> dict:
    """Nodes, edges, CPT tables, root marginals, and optional fit metadata.

    Edges and marginals are derived views kept for readability; the CPTs are
    the source of truth on load.
    """
    out = {
        "nodes": list(scm.nodes),
        "parents": {v: list(ps) for v, ps in scm.parents.items()},
        "edges": sorted([p, v] for v in scm.nodes for p in scm.parents[v]),
        "marginals": {v: scm.cpt[v][()] for v in scm.roots},
        "cpt": {v: {_pa_key(pa): p for pa, p in sorted(table.items())}
                for v, table in scm.cpt.items()},
    }
    if meta:
        out["meta"] = dict(meta)
    return out


def scm_from_dict(data: dict) -> BooleanScm:
    parents = {v: tuple(ps) for v, ps in data["parents"].items()}
    cpt = {
        v: {tuple(ch == "1" for ch in key): float(p) for key, p in table.items()}
        for v, table in data["cpt"].items()
    }
    return BooleanScm(nodes=tuple(data["nodes"]), parents=parents, cpt=cpt)


def load_scm(path: str | Path) -> BooleanScm:
    with open(path, encoding="utf-8") as fh:
        return scm_from_dict(json.load(fh))


def save_scm(scm: BooleanScm, path: str | Path,
             meta: Mapping | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scm_to_dict(scm, meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
