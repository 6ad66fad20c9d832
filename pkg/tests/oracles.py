"""Independent reference computations used only by the tests.

Nothing here imports the package's rate or simulation code: the matching-rate
oracle works on Python sets in exact rational arithmetic, and the queueing
oracles are textbook closed forms or small birth-death chains.
"""

from __future__ import annotations

import itertools
import math
import random
from collections import deque
from fractions import Fraction


def exact_rates(alpha, beta, edges, I, J):
    """Permutation-sum matching rates in exact arithmetic.

    ``alpha`` and ``beta`` are sequences of Fractions (or ints); ``edges`` a
    set of (customer, server) pairs. Returns ``{(i, j): Fraction}``.
    """
    cust_of = {j: {i for i, s in edges if s == j} for j in range(J)}

    def compatible(servers):
        return set().union(*(cust_of[j] for j in servers)) if servers else set()

    def unique(servers):
        others = set(range(J)) - set(servers)
        return set(range(I)) - compatible(others)

    def amass(cs):
        return sum((alpha[c] for c in cs), Fraction(0))

    binv = Fraction(0)
    perms = list(itertools.permutations(range(J)))
    num = {e: Fraction(0) for e in edges}
    for perm in perms:
        pre = [perm[:k + 1] for k in range(J)]
        U = [unique(p) for p in pre]
        ak = [amass(u) for u in U]
        bk = [sum((beta[s] for s in p), Fraction(0)) for p in pre]
        prod = Fraction(1)
        for k in range(J - 1):
            assert bk[k] > ak[k], "not pooled"
            prod *= bk[k] - ak[k]
        w = 1 / prod
        binv += w
        for (i, j) in edges:
            phi, psi, chi = [], [], []
            for k in range(J):
                if ak[k] == 0:
                    f = g = Fraction(0)
                else:
                    f = amass(U[k] & {i}) / ak[k]
                    g = amass(U[k] & (cust_of[j] - {i})) / ak[k]
                phi.append(f)
                psi.append(g)
                chi.append(1 - f - g)
            total = Fraction(0)
            for k in range(J - 1):
                run = Fraction(1)
                for l in range(k):
                    run *= (bk[l] - ak[l]) / (bk[l] - ak[l] * chi[l])
                total += phi[k] * ak[k] / (bk[k] - ak[k] * chi[k]) * run
            run = Fraction(1)
            for l in range(J - 1):
                run *= (bk[l] - ak[l]) / (bk[l] - ak[l] * chi[l])
            total += phi[J - 1] / (phi[J - 1] + psi[J - 1]) * run
            num[(i, j)] += w * total
    return {(i, j): beta[j] * n / binv for (i, j), n in num.items()}, 1 / binv


def almost_complete_rates(alpha, beta):
    """Closed form for the graph where server j serves every type but j."""
    n = len(alpha)
    z = 1 + sum(alpha[k] * beta[k] / (1 - alpha[k] - beta[k]) for k in range(n))
    out = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            top = (1 - alpha[i]) * (1 - beta[j]) - alpha[j] * beta[i]
            bot = (1 - alpha[i] - beta[i]) * (1 - alpha[j] - beta[j])
            out[(i, j)] = alpha[i] * beta[j] * top / bot / z
    return out


def fcfs_matching_counts(customers, servers, edges):
    """Literal FCFS matching of two finite type sequences.

    Server ``n`` takes the earliest unmatched compatible customer among
    those drawn so far; the customer sequence is scanned from the start each
    time (quadratic, small inputs only). Unmatched servers are dropped.
    """
    used = [False] * len(customers)
    counts = {}
    for s in servers:
        for m, c in enumerate(customers):
            if not used[m] and (c, s) in edges:
                used[m] = True
                counts[(c, s)] = counts.get((c, s), 0) + 1
                break
    return counts


def erlang_c_wait(n: int, lam: float, mu: float) -> float:
    """Mean wait in M/M/n (no abandonment)."""
    a = lam / mu
    rho = a / n
    s = sum(a ** k / math.factorial(k) for k in range(n))
    top = a ** n / math.factorial(n) / (1 - rho)
    pw = top / (s + top)
    return pw / (n * mu - lam)


def erlang_a_abandonment(n: int, lam: float, mu: float, theta: float, cap: int = 2000) -> float:
    """Abandonment probability in M/M/n+M from the truncated birth-death chain."""
    logp = [0.0]
    for k in range(1, cap + 1):
        death = min(k, n) * mu + max(k - n, 0) * theta
        logp.append(logp[-1] + math.log(lam / death))
    top = max(logp)
    p = [math.exp(x - top) for x in logp]
    z = sum(p)
    queue = sum(max(k - n, 0) * pk for k, pk in enumerate(p)) / z
    return theta * queue / lam


def random_pooled_instance(rng: random.Random, I: int, J: int, extra: float = 0.4):
    """Connected random graph with strictly positive edge flows.

    Alpha and beta are the row and column sums of the flows, which makes the
    instance pooled: every nonempty proper server subset receives flow from
    a customer type that also feeds the complement.
    """
    nodes = [("c", i) for i in range(I)] + [("s", j) for j in range(J)]
    while True:
        edges = {(i, j) for i in range(I) for j in range(J) if rng.random() < extra}
        # a random spanning structure: every type gets one edge, then check connectivity
        for i in range(I):
            edges.add((i, rng.randrange(J)))
        for j in range(J):
            edges.add((rng.randrange(I), j))
        adj = {v: set() for v in nodes}
        for i, j in edges:
            adj[("c", i)].add(("s", j))
            adj[("s", j)].add(("c", i))
        seen, todo = {nodes[0]}, deque([nodes[0]])
        while todo:
            for w in adj[todo.popleft()]:
                if w not in seen:
                    seen.add(w)
                    todo.append(w)
        if len(seen) == len(nodes):
            break
    flow = {e: rng.uniform(0.2, 1.0) for e in edges}
    total = sum(flow.values())
    alpha = [sum(v for (i, _), v in flow.items() if i == c) / total for c in range(I)]
    beta = [sum(v for (_, j), v in flow.items() if j == s) / total for s in range(J)]
    # exact sums to 1 within the package's 1e-12 tolerance
    alpha[-1] = 1.0 - sum(alpha[:-1])
    beta[-1] = 1.0 - sum(beta[:-1])
    return edges, alpha, beta


def random_almost_complete(rng: random.Random, n: int):
    """Pooled alpha, beta for the graph where server j serves every type but j."""
    # n = 2 is two disjoint edges: the two CRP conditions sum to 2 < 2, never pooled
    assert n >= 3
    while True:
        a = [rng.uniform(0.05, 1) for _ in range(n)]
        b = [rng.uniform(0.05, 1) for _ in range(n)]
        a = [x / sum(a) for x in a]
        b = [x / sum(b) for x in b]
        a[-1] = 1 - sum(a[:-1])
        b[-1] = 1 - sum(b[:-1])
        if all(x + y < 0.95 for x, y in zip(a, b)):
            return a, b
