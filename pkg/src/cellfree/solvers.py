"""Classical baselines: DSATUR + tabu pilot assignment, WMMSE power control
and an exhaustive set-partition oracle for small UE counts."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .config import SystemConfig
from .pilot import canonical_labels, compact, labels_to_matrix, matrix_to_labels
from .sim import ChannelSet, FrameResult, equal_power, evaluate_frame, sinr

MAX_ORACLE_K = 7


# ---------------------------------------------------------------------------
# pilot assignment


@dataclass
class InterferenceGraph:
    W: np.ndarray  # (K, K) LSF similarity, zero diagonal
    shared_ap: np.ndarray  # (K, K) bool, UEs with a common serving AP

    @property
    def K(self) -> int:
        return self.W.shape[0]

    def hard_edges(self, threshold: float = math.inf) -> np.ndarray:
        E = (self.W >= threshold) | self.shared_ap
        np.fill_diagonal(E, False)
        return E


def interference_graph(beta, A) -> InterferenceGraph:
    """``w_jk = beta_j^T beta_k / M`` between LSF vectors of UEs j and k."""
    beta = np.asarray(beta, dtype=float)
    A = np.asarray(A, dtype=float)
    M = beta.shape[0]
    W = beta.T @ beta / M
    np.fill_diagonal(W, 0.0)
    shared = (A.T @ A) > 0
    np.fill_diagonal(shared, False)
    return InterferenceGraph(W, shared)


def dsatur_colors(edges: np.ndarray) -> np.ndarray:
    """DSATUR coloring: pick the uncolored vertex with the most distinct
    neighbour colors, then the highest degree, then the lowest index, and
    give it the smallest free color."""
    edges = np.asarray(edges, dtype=bool)
    K = edges.shape[0]
    colors = np.full(K, -1)
    degree = edges.sum(axis=1)
    for _ in range(K):
        best, best_key = -1, None
        for v in range(K):
            if colors[v] >= 0:
                continue
            sat = len({colors[u] for u in np.flatnonzero(edges[v]) if colors[u] >= 0})
            key = (sat, degree[v], -v)
            if best_key is None or key > best_key:
                best, best_key = v, key
        taken = {colors[u] for u in np.flatnonzero(edges[best]) if colors[u] >= 0}
        c = 0
        while c in taken:
            c += 1
        colors[best] = c
    return colors


def dsatur_assign(graph: InterferenceGraph, threshold: float = math.inf) -> np.ndarray:
    """Initial (K, K) binary assignment; colors become pilot sequences."""
    return labels_to_matrix(dsatur_colors(graph.hard_edges(threshold)), graph.K)


def frame_objective(X, channels: ChannelSet, config: SystemConfig, subframes: int | None = None) -> float:
    """Average net-SE with equal power, the search objective."""
    return evaluate_frame(X, channels, config, "equal", subframes=subframes).eta_bar


@dataclass
class TabuResult:
    X: np.ndarray
    objective: float
    history: list  # objective of the current point per iteration


def tabu_refine(X0, channels: ChannelSet, config: SystemConfig, iterations: int = 10,
                tabu_length: int | None = None, subframes: int | None = None) -> TabuResult:
    """Tabu search over single-UE reassignments.

    A move sends one UE to any of the ``K`` sequences. Moves reversing a
    recent (UE, sequence) move, or returning to a recently visited partition,
    are tabu unless they beat the best objective found so far. Assignments
    equal up to relabeling are evaluated once per iteration.
    """
    K = channels.K
    tabu_length = K if tabu_length is None else tabu_length
    labels = matrix_to_labels(X0)
    cache: dict = {}

    def score(lab) -> float:
        key = canonical_labels(lab)
        if key not in cache:
            cache[key] = frame_objective(labels_to_matrix(lab, K), channels, config, subframes)
        return cache[key]

    current = score(labels)
    best_labels, best = labels.copy(), current
    tabu: list = []
    visited = [canonical_labels(labels)]
    history = [current]
    for _ in range(iterations):
        move, move_val = None, -math.inf
        seen = {canonical_labels(labels)}  # moves that only relabel are not moves
        for k in range(K):
            for g in range(K):
                if g == labels[k]:
                    continue
                cand = labels.copy()
                cand[k] = g
                key = canonical_labels(cand)
                if key in seen:
                    continue
                seen.add(key)
                val = score(cand)
                if ((k, g) in tabu or key in visited) and val <= best:
                    continue
                if val > move_val:
                    move, move_val = (k, g), val
        if move is None:
            break
        k, g = move
        tabu.append((k, int(labels[k])))
        tabu = tabu[-tabu_length:] if tabu_length > 0 else []
        labels[k] = g
        visited = (visited + [canonical_labels(labels)])[-tabu_length:] if tabu_length > 0 else []
        current = move_val
        history.append(current)
        if current > best:
            best_labels, best = labels.copy(), current
    return TabuResult(labels_to_matrix(best_labels, K), best, history)


# ---------------------------------------------------------------------------
# power allocation


@dataclass
class WMMSEResult:
    P: np.ndarray  # (M, K)
    sum_rate: float
    history: list  # sum rate (bits) after every iteration
    iterations: int


def sum_rate(G, P, noise: float) -> float:
    return float(np.sum(np.log2(1.0 + sinr(G, P, noise))))


def _per_ap_solve(Qd, d, budget: float, tol: float = 1e-13) -> np.ndarray:
    """argmin sum_i Qd_i q_i^2 - 2 d_i q_i  s.t. sum q^2 <= budget, q >= 0."""
    dp = np.maximum(d, 0.0)
    if not np.any(dp > 0):
        return np.zeros_like(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        q0 = np.where(Qd > 0, dp / Qd, np.inf)
    if np.all(np.isfinite(q0)) and np.sum(q0 ** 2) <= budget:
        return np.where(dp > 0, q0, 0.0)
    lo, hi = 0.0, math.sqrt(np.sum(dp ** 2) / budget) + 1e-300
    while np.sum((dp / (Qd + hi)) ** 2) > budget:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sum((dp / (Qd + mid)) ** 2) > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return dp / (Qd + hi)


def _wmmse_run(G, A, P_max, noise, q, tol, max_iter):
    M, K, _ = G.shape
    Gr, Gi = G.real, G.imag
    history = [sum_rate(G, q ** 2, noise)]
    it = 0
    for it in range(1, max_iter + 1):
        amp = np.einsum("mi,mik->ik", q, G)  # stream i seen at UE k
        total = np.sum(np.abs(amp) ** 2, axis=0) + noise
        a = np.diag(amp)
        u = np.conj(a) / total
        e = 1.0 - np.abs(a) ** 2 / total
        w = 1.0 / np.maximum(e, 1e-300)
        coef = w * np.abs(u) ** 2  # (K,)
        # Q^(i)_{m m'} = sum_k coef_k Re(g_mik conj(g_m'ik))
        Qi = (np.einsum("k,mik,nik->imn", coef, Gr, Gr) + np.einsum("k,mik,nik->imn", coef, Gi, Gi))
        c = (w * (u * np.einsum("mkk->mk", G)).real)  # (M, K) indexed [m, i]
        for m in range(M):
            served = A[m] > 0
            if not served.any():
                continue
            cross = np.einsum("in,ni->i", Qi[:, m, :], q) - Qi[:, m, m] * q[m]
            d = c[m] - cross
            qm = np.zeros(K)
            qm[served] = _per_ap_solve(Qi[served, m, m], d[served], P_max)
            q[m] = qm
        history.append(sum_rate(G, q ** 2, noise))
        if history[-1] - history[-2] < tol:
            break
    return q, history, it


def wmmse_power(G_hat, A, config: SystemConfig | None = None, P_max: float | None = None,
                noise_ue: float | None = None, tol: float = 1e-5, max_iter: int = 200,
                n_starts: int = 8, seed: int = 0) -> WMMSEResult:
    """WMMSE power control on the effective scalar links ``G_hat`` (M, K, K).

    Each iteration updates receivers and weights in closed form and then the
    amplitudes ``q = sqrt(p)`` of one AP at a time, exactly solving the
    per-AP budget-constrained quadratic with a bisected multiplier. The best
    of several starts (equal power, single-UE corners, random splits) is
    returned.
    """
    G_hat = np.asarray(G_hat)
    if not np.all(np.isfinite(G_hat)):
        raise ValueError("channel entries must be finite")
    A = np.asarray(A, dtype=float)
    P_max = config.P_max if P_max is None else P_max
    noise = config.noise_power if noise_ue is None else noise_ue
    best = None
    for P0 in _starts(A, P_max, n_starts, seed):
        q, hist, it = _wmmse_run(G_hat, A, P_max, noise, np.sqrt(P0), tol, max_iter)
        res = WMMSEResult(q ** 2, hist[-1], hist, it)
        if best is None or res.sum_rate > best.sum_rate:
            best = res
    return best


def _starts(A, P_max: float, n_starts: int, seed: int):
    """Equal power, then single-UE-per-AP corners (if few), then random splits."""
    yield equal_power(A, P_max)
    served = [np.flatnonzero(row) for row in A]
    n_corners = int(np.prod([max(len(s), 1) for s in served]))
    emitted = 1
    if n_corners <= n_starts:
        for choice in itertools.product(*[s if len(s) else [-1] for s in served]):
            P0 = np.zeros_like(A)
            for m, k in enumerate(choice):
                if k >= 0:
                    P0[m, k] = P_max
            yield P0
            emitted += 1
    rng = np.random.default_rng(seed)
    while emitted < n_starts:
        raw = rng.uniform(0.0, 1.0, A.shape) * A
        yield P_max * raw / np.maximum(raw.sum(axis=1, keepdims=True), 1e-300)
        emitted += 1


def grid_search_power(G, A, P_max: float, noise: float, step: float = 0.01,
                      chunk: int = 1 << 20) -> tuple[np.ndarray, float]:
    """Brute-force sum-rate maximization over per-AP power simplices (tiny instances)."""
    G = np.asarray(G)
    A = np.asarray(A, dtype=float)
    M, K, _ = G.shape
    n = int(round(1.0 / step))
    per_ap = []
    for m in range(M):
        served = np.flatnonzero(A[m])
        if len(served) == 0:
            per_ap.append(np.zeros((1, K)))
            continue
        grids = np.stack(np.meshgrid(*[np.arange(n + 1)] * len(served), indexing="ij"), -1)
        grids = grids.reshape(-1, len(served))
        grids = grids[grids.sum(axis=1) <= n]
        P = np.zeros((len(grids), K))
        P[:, served] = grids * (P_max / n)
        per_ap.append(P)
    sizes = [len(p) for p in per_ap]
    total = int(np.prod(sizes))
    best_val, best_idx = -math.inf, 0
    eye = np.eye(K)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        parts = np.unravel_index(idx, sizes)
        P = np.stack([per_ap[m][parts[m]] for m in range(M)], axis=1)  # (C, M, K)
        amp = np.einsum("cmi,mik->cik", np.sqrt(P), G)
        power = np.abs(amp) ** 2
        signal = (power * eye).sum(axis=1)
        interference = power.sum(axis=1) - signal
        rates = np.log2(1.0 + signal / (np.maximum(interference, 0.0) + noise)).sum(axis=1)
        j = int(np.argmax(rates))
        if rates[j] > best_val:
            best_val, best_idx = float(rates[j]), int(idx[j])
    parts = np.unravel_index(best_idx, sizes)
    P = np.stack([per_ap[m][parts[m]] for m in range(M)])
    return P, best_val


# ---------------------------------------------------------------------------
# oracle


def set_partitions(K: int) -> Iterator[tuple]:
    """All partitions of ``K`` items as restricted growth strings."""
    if K < 1:
        return
    labels = [0] * K

    def rec(i: int, n_blocks: int):
        if i == K:
            yield tuple(labels)
            return
        for b in range(n_blocks + 1):
            labels[i] = b
            yield from rec(i + 1, max(n_blocks, b + 1))

    labels[0] = 0
    yield from rec(1, 1)


def wmmse_rule(config: SystemConfig, channels: ChannelSet, **kw):
    """Per-subframe WMMSE as a power rule for :func:`evaluate_frame`."""
    def rule(G_hat, A, t):
        return wmmse_power(G_hat, A, config, noise_ue=channels.noise_ue, **kw).P
    return rule


@dataclass
class OracleResult:
    X: np.ndarray
    eta_bar: float
    n_candidates: int
    values: dict


def exhaustive_oracle(channels: ChannelSet, config: SystemConfig, power_rule: str = "equal",
                      subframes: int | None = None) -> OracleResult:
    """Best pilot partition by enumeration (``K <= 7``)."""
    K = channels.K
    if K > MAX_ORACLE_K:
        raise ValueError(f"exhaustive search is limited to K <= {MAX_ORACLE_K}, got {K}")
    if power_rule == "equal":
        power = "equal"
    elif power_rule == "wmmse":
        power = wmmse_rule(config, channels)
    else:
        raise ValueError(f"unknown power rule {power_rule!r}")
    values = {}
    for labels in set_partitions(K):
        X = compact(labels_to_matrix(labels, K)).X_o
        values[labels] = evaluate_frame(X, channels, config, power, subframes=subframes).eta_bar
    best = max(values, key=lambda lab: (values[lab], [-x for x in lab]))
    return OracleResult(labels_to_matrix(best, K), values[best], len(values), values)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class BaselineResult:
    X: np.ndarray
    frame: FrameResult

    def to_json(self) -> dict:
        ca = compact(self.X)
        return {"K": int(self.X.shape[1]), "X": self.X.astype(int).tolist(),
                "tau_p": int(ca.tau_p), "X_o": ca.X_o.astype(int).tolist(),
                "P": [np.asarray(p).tolist() for p in self.frame.powers],
                "eta": [float(e) for e in self.frame.etas],
                "eta_bar": float(self.frame.eta_bar)}


def dsatur_tabu_wmmse(channels: ChannelSet, config: SystemConfig, threshold: float = math.inf,
                      iterations: int = 10, wmmse_kw: dict | None = None) -> BaselineResult:
    """DSATUR start, tabu refinement under equal power, then WMMSE per subframe."""
    X0 = dsatur_assign(interference_graph(channels.beta, channels.A), threshold)
    X = tabu_refine(X0, channels, config, iterations).X
    frame = evaluate_frame(compact(X).X_o, channels, config,
                           wmmse_rule(config, channels, **(wmmse_kw or {})))
    return BaselineResult(X, frame)


def oracle_baseline(channels: ChannelSet, config: SystemConfig, power_rule: str = "equal") -> BaselineResult:
    res = exhaustive_oracle(channels, config, power_rule)
    power = "equal" if power_rule == "equal" else wmmse_rule(config, channels)
    return BaselineResult(res.X, evaluate_frame(compact(res.X).X_o, channels, config, power))
