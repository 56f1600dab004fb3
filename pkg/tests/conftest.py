"""Shared generators and oracles for the test suite."""
import itertools
import random

from docdiag.scm import BooleanScm, make_scm


def random_boolean_scm(rng: random.Random, max_nodes: int = 8,
                       p_edge: float = 0.4,
                       p_low: float = 0.05, p_high: float = 0.95) -> BooleanScm:
    n = rng.randint(2, max_nodes)
    nodes = [f"v{i}" for i in range(n)]
    parents = {}
    for i, v in enumerate(nodes):
        pool = nodes[:i]
        parents[v] = tuple(p for p in pool if rng.random() < p_edge)[:4]
    cpt = {}
    for v in nodes:
        table = {}
        for pa in itertools.product((False, True), repeat=len(parents[v])):
            table[pa] = rng.uniform(p_low, p_high)
        cpt[v] = table
    return make_scm(parents, cpt)


def sample_world(scm: BooleanScm, rng: random.Random) -> dict[str, bool]:
    """One ancestral draw, guaranteed consistent with the mechanisms."""
    values: dict[str, bool] = {}
    for v in scm.nodes:
        pa = tuple(values[p] for p in scm.parents[v])
        values[v] = rng.random() < scm.prob(v, pa)
    return values


def brute_force_do_marginal(scm: BooleanScm, x: str, x_value: bool, y: str) -> float:
    """P(y=1 | do(x=x_value)) by full enumeration, independent of the SCM ops."""
    total = 0.0
    for values in itertools.product((False, True), repeat=len(scm.nodes)):
        a = dict(zip(scm.nodes, values))
        if a[x] != x_value:
            continue
        prob = 1.0
        for v in scm.nodes:
            if v == x:
                continue  # mechanism replaced by the intervention constant
            p1 = scm.prob(v, tuple(a[q] for q in scm.parents[v]))
            prob *= p1 if a[v] else (1.0 - p1)
        if a[y]:
            total += prob
    return total


def brute_force_ace(scm: BooleanScm, x: str, y: str) -> float:
    return (brute_force_do_marginal(scm, x, True, y)
            - brute_force_do_marginal(scm, x, False, y))
