"""Loop cost and optimal ordering/orientation of a panel's boundary edges.

An *oriented state* of edge ``i`` is ``2*i`` (as stored) or ``2*i + 1``
(reversed). The cost of going from state ``a`` to state ``b`` is the squared
distance between the end of ``a`` and the start of ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class LoopSolution:
    order: tuple  # edge indices, cyclic sequence starting with edge 0
    flips: tuple  # one bool per position
    cost: float
    mode: str  # "exact" or "heuristic"

    def apply(self, edges) -> list:
        return [edges[i].flipped() if f else edges[i] for i, f in zip(self.order, self.flips)]


def _endpoints(edges):
    starts = np.array([e.points[0] for e in edges], dtype=float)
    ends = np.array([e.points[-1] for e in edges], dtype=float)
    # state 2i: as stored, 2i+1: reversed
    s = np.empty((2 * len(edges), starts.shape[1]))
    t = np.empty_like(s)
    s[0::2], s[1::2] = starts, ends
    t[0::2], t[1::2] = ends, starts
    return s, t


def transition_costs(edges) -> np.ndarray:
    """C[a, b] = ||end(a) - start(b)||^2 over oriented states."""
    s, t = _endpoints(edges)
    diff = t[:, None, :] - s[None, :, :]
    return (diff**2).sum(axis=-1)


def loop_cost(edges) -> float:
    """Cyclic sum of squared gaps between each edge's end and the next edge's start."""
    if not edges:
        raise ValueError("loop_cost needs at least one edge")
    ends = np.array([e.points[-1] for e in edges], dtype=float)
    starts = np.array([e.points[0] for e in edges], dtype=float)
    return float(((ends - np.roll(starts, -1, axis=0)) ** 2).sum())


def _cycle_cost(C, states) -> float:
    return float(sum(C[states[k]][states[(k + 1) % len(states)]] for k in range(len(states))))


def _canonical(states, n):
    """Rotate so edge 0 leads; if it is reversed, walk the cycle backwards."""
    k = next(i for i, st in enumerate(states) if st // 2 == 0)
    states = states[k:] + states[:k]
    if states[0] % 2 == 1:
        states = [states[0] ^ 1] + [st ^ 1 for st in reversed(states[1:])]
    return tuple(st // 2 for st in states), tuple(bool(st % 2) for st in states)


class _SubsetTable:
    """Held-Karp table holding the optimal closed-loop cost of every edge subset.

    Each subset's loop is anchored at its lowest-index edge in stored
    orientation; reversing a whole cycle leaves its cost unchanged, so this
    loses nothing. Paths may only grow by edges above the anchor, so the
    tables for all anchors share one array.
    """

    def __init__(self, C: np.ndarray, n: int):
        self.n = n
        full = 1 << n
        S = 2 * n
        dp = np.full((full, S), np.inf)
        parent = np.full((full, S), -1, dtype=np.int64)
        for r in range(n):
            dp[1 << r, 2 * r] = 0.0
        masks = np.arange(full)
        popcount = np.array([bin(m).count("1") for m in range(full)])
        lowbit = np.array([(m & -m).bit_length() - 1 if m else -1 for m in range(full)])
        for size in range(1, n):
            layer = masks[popcount == size]
            for t in range(n):
                sel = layer[((layer >> t) & 1 == 0) & (lowbit[layer] < t)]
                if len(sel) == 0:
                    continue
                # (m, S) + (S, 2) -> (m, S, 2)
                cand = dp[sel][:, :, None] + C[:, 2 * t : 2 * t + 2][None]
                best = cand.argmin(axis=1)
                vals = np.take_along_axis(cand, best[:, None, :], axis=1)[:, 0, :]
                tgt = sel | (1 << t)
                cur = dp[tgt, 2 * t : 2 * t + 2]
                better = vals < cur
                dp[tgt, 2 * t : 2 * t + 2] = np.where(better, vals, cur)
                parent[tgt, 2 * t : 2 * t + 2] = np.where(better, best, parent[tgt, 2 * t : 2 * t + 2])
        anchor = 2 * lowbit[1:]
        closing = dp[1:] + C[:, anchor].T
        self.best_end = np.concatenate([[-1], closing.argmin(axis=1)])
        self.cycle = np.concatenate([[np.inf], closing.min(axis=1)])
        self.parent = parent

    def cost(self, mask: int) -> float:
        return float(self.cycle[mask])

    def states(self, mask: int) -> list:
        st = int(self.best_end[mask])
        seq = []
        m = mask
        while st >= 0:
            seq.append(st)
            prev = int(self.parent[m, st])
            m &= ~(1 << (st // 2))
            st = prev
        return seq[::-1]


def _exact(edges, C):
    n = len(edges)
    table = _SubsetTable(C, n)
    full = (1 << n) - 1
    states = table.states(full)
    order, flips = _canonical(states, n)
    return LoopSolution(order, flips, table.cost(full), "exact")


def _local_search(C, states):
    """Flip, 2-opt and relocation moves until none improves the cycle.

    Candidate moves are screened by their O(1) cost delta; an accepted move is
    confirmed with a full recomputation so rounding can never cause cycling.
    """
    n = len(states)
    cost = _cycle_cost(C, states)

    def accept(cand):
        nonlocal states, cost
        c = _cycle_cost(C, cand)
        if c < cost - 1e-15:
            states, cost = cand, c
            return True
        return False

    improved = True
    while improved:
        improved = False
        # single-edge flip
        for k in range(n):
            p, s, q = states[k - 1], states[k], states[(k + 1) % n]
            f = s ^ 1
            if n > 1 and C[p][f] + C[f][q] - C[p][s] - C[s][q] < -1e-15:
                if accept(states[:k] + [f] + states[k + 1 :]):
                    improved = True
        # 2-opt: reverse a contiguous block, flipping each edge in it; the
        # block's inner transitions keep their cost under reversal
        for i in range(n - 1):
            for j in range(i + 1, n):
                if j - i + 1 >= n:
                    continue
                p, q = states[i - 1], states[(j + 1) % n]
                si, sj = states[i], states[j]
                if C[p][sj ^ 1] + C[si ^ 1][q] - C[p][si] - C[sj][q] < -1e-15:
                    if accept(states[:i] + [st ^ 1 for st in reversed(states[i : j + 1])] + states[j + 1 :]):
                        improved = True
        # relocate one edge (either orientation) to another slot
        moved = False
        for i in range(n):
            if n < 3:
                break
            p, s, q = states[i - 1], states[i], states[(i + 1) % n]
            rest = states[:i] + states[i + 1 :]
            gain = C[p][q] - C[p][s] - C[s][q]
            m = len(rest)
            for pos in range(m):
                a, b = rest[pos - 1], rest[pos]
                for st in (s, s ^ 1):
                    if gain + C[a][st] + C[st][b] - C[a][b] < -1e-15:
                        if accept(rest[:pos] + [st] + rest[pos:]):
                            moved = True
                            break
                if moved:
                    break
            if moved:
                break
        improved = improved or moved
    return states, cost


def _greedy(C, start_state, n):
    used = {start_state // 2}
    seq = [start_state]
    while len(seq) < n:
        row = C[seq[-1]]
        best = min(
            (st for st in range(2 * n) if st // 2 not in used),
            key=lambda st: (row[st], st),
        )
        seq.append(best)
        used.add(best // 2)
    return seq


def _heuristic(edges, C):
    n = len(edges)
    C = C.tolist()
    best = None
    for start in range(n):
        states, cost = _local_search(C, _greedy(C, 2 * start, n))
        if best is None or cost < best[1] - 1e-15:
            best = (states, cost)
    order, flips = _canonical(best[0], n)
    cost = _cycle_cost(C, [2 * i + int(f) for i, f in zip(order, flips)])
    return LoopSolution(order, flips, cost, "heuristic")


def optimal_loop_order(edges, brute_force_limit: int = BRUTE_FORCE_LIMIT) -> LoopSolution:
    """Ordering and orientation of ``edges`` minimizing the cyclic loop cost.

    Up to ``brute_force_limit`` edges the minimum is exact (Held-Karp over
    oriented edges); above it, greedy nearest-endpoint chaining from every
    start edge is polished by flip, 2-opt and relocation moves.
    """
    if not edges:
        raise ValueError("optimal_loop_order needs at least one edge")
    C = transition_costs(edges)
    if len(edges) <= brute_force_limit:
        return _exact(edges, C)
    return _heuristic(edges, C)


def subset_cycle_costs(edges) -> "_SubsetTable":
    return _SubsetTable(transition_costs(edges), len(edges))


def prune_loop(edges, margin: float = 1e-9, min_edges: int = 3, brute_force_limit: int = BRUTE_FORCE_LIMIT):
    """Greedily drop the edge whose removal lowers the optimal loop cost most.

    Stops when no removal improves the cost by more than ``margin`` or only
    ``min_edges`` remain. Returns ``(kept_indices, removed, solution)`` where
    ``removed`` lists ``(index, cost_before, cost_after)`` and ``solution`` is
    the optimal loop over the kept edges (indices relative to ``kept_indices``).
    """
    n = len(edges)
    if n == 0:
        raise ValueError("prune_loop needs at least one edge")
    keep = list(range(n))
    removed = []
    table = None  # Held-Karp table over ``base`` once few enough edges remain
    base = []

    def cost_of(idx):
        nonlocal table, base
        if len(idx) <= brute_force_limit:
            if table is None:
                base = list(keep)
                table = subset_cycle_costs([edges[i] for i in base])
            pos = {e: k for k, e in enumerate(base)}
            return table.cost(sum(1 << pos[i] for i in idx))
        return optimal_loop_order([edges[i] for i in idx], brute_force_limit).cost

    current = cost_of(keep)
    while len(keep) > min_edges:
        best = None
        for k in keep:
            c = cost_of([i for i in keep if i != k])
            if c < current - margin and (best is None or c < best[1]):
                best = (k, c)
        if best is None:
            break
        removed.append((best[0], current, best[1]))
        keep.remove(best[0])
        current = best[1]
    if table is not None:
        pos = {e: k for k, e in enumerate(base)}
        mask = sum(1 << pos[i] for i in keep)
        # table states refer to positions in ``base``; map them to ``keep``
        local = {pos[e]: k for k, e in enumerate(keep)}
        states = [2 * local[st // 2] + st % 2 for st in table.states(mask)]
        order, flips = _canonical(states, len(keep))
        solution = LoopSolution(order, flips, table.cost(mask), "exact")
    else:
        solution = optimal_loop_order([edges[i] for i in keep], brute_force_limit)
    return keep, removed, solution
