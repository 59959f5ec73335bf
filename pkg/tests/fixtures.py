"""Shared graph fixtures."""

import numpy as np

from damprank.graph import (EdgeGraph, PersonalizationVector, build_operator, dag_of_cliques,
                            gen_personalization, random_graph)


class Case:
    """A graph, a personalization vector and the operator built from both."""

    def __init__(self, name, g, pv, dangling="patch_v"):
        self.name = name
        self.g = g
        self.pv = pv
        self.P = build_operator(g, dangling, pv)

    def __repr__(self):
        return f"Case({self.name})"


def cycle3():
    return EdgeGraph.from_edges(3, [(0, 1), (1, 2), (2, 0)])


def chain3():
    return EdgeGraph.from_edges(3, [(0, 1), (1, 2)])


def e0(n=3):
    v = np.zeros(n)
    v[0] = 1.0
    return PersonalizationVector(v)


def uniform(n):
    return PersonalizationVector(np.full(n, 1.0 / n))


def perron_case(n=40, seed=0):
    """Operator without dangling fill and its Perron vector (dense oracle)."""
    g = random_graph(n, 6, seed=seed)
    P = build_operator(g, "uniform")
    A = P.toarray()
    lam, V = np.linalg.eig(A)
    x = np.real(V[:, np.argmin(np.abs(lam - 1))])
    x = np.abs(x) / np.abs(x).sum()
    for _ in range(50):  # polish to roundoff
        x = A @ x
        x /= x.sum()
    x /= x.sum()
    x[np.argmax(x)] += 1.0 - x.sum()
    return P, PersonalizationVector(x)


def fixture_cases():
    """Small fixtures used across modules; all operators are fully stochastic."""
    cases = [
        Case("cycle3-e0", cycle3(), e0()),
        Case("chain3-uniform", chain3(), uniform(3)),
    ]
    for seed in range(3):
        g = random_graph(50, 8, seed=seed)
        cases.append(Case(f"random50-{seed}", g, gen_personalization(50, seed=seed)))
    g = dag_of_cliques(20, 10, seed=3)
    cases.append(Case("cliques200", g, gen_personalization(200, seed=3)))
    return cases


CASES = fixture_cases()
