import itertools

import networkx as nx
import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from cellfree.config import desk_config
from cellfree.pilot import canonical_labels, compact, labels_to_matrix
from cellfree.sim import equal_power, evaluate_frame, generate_channels, subframe_state
from cellfree.solvers import (_per_ap_solve, dsatur_assign, dsatur_colors, dsatur_tabu_wmmse,
                              exhaustive_oracle, frame_objective, grid_search_power,
                              interference_graph, oracle_baseline, set_partitions, sum_rate,
                              tabu_refine, wmmse_power)

SMALL = desk_config(M=2, N=2, K=4, N_T=2)


def _edges(graph: nx.Graph, n: int) -> np.ndarray:
    E = np.zeros((n, n), bool)
    for u, v in graph.edges:
        E[u, v] = E[v, u] = True
    return E


# --- DSATUR ---------------------------------------------------------------------

@given(st.integers(1, 12), st.floats(0.0, 1.0), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_dsatur_proper_coloring(n, p, seed):
    g = nx.gnp_random_graph(n, p, seed=seed)
    colors = dsatur_colors(_edges(g, n))
    assert all(colors[u] != colors[v] for u, v in g.edges)
    max_deg = max((d for _, d in g.degree), default=0)
    assert colors.max() + 1 <= max_deg + 1


@pytest.mark.parametrize("graph,expected", [
    (nx.complete_graph(5), 5),
    (nx.cycle_graph(6), 2),
    (nx.cycle_graph(7), 3),
    (nx.complete_bipartite_graph(3, 4), 2),
    (nx.empty_graph(4), 1),
])
def test_dsatur_known_chromatic_numbers(graph, expected):
    n = graph.number_of_nodes()
    assert dsatur_colors(_edges(graph, n)).max() + 1 == expected


@given(st.integers(2, 10), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_dsatur_exact_on_bipartite(n, seed):
    g = nx.bipartite.random_graph(n, n, 0.4, seed=seed)
    colors = dsatur_colors(_edges(g, 2 * n))
    assert colors.max() + 1 <= 2


def test_interference_graph_weights(rng):
    beta = rng.uniform(size=(3, 4))
    A = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 1]])
    g = interference_graph(beta, A)
    assert g.W[0, 1] == pytest.approx(beta[:, 0] @ beta[:, 1] / 3)
    assert np.all(np.diag(g.W) == 0)
    E = g.hard_edges()
    assert E[2, 3] and not E[0, 1]
    assert g.hard_edges(threshold=0.0).sum() == 12


def test_dsatur_assign_separates_shared_aps():
    ch = generate_channels(SMALL, 5)
    X = dsatur_assign(interference_graph(ch.beta, ch.A))
    labels = np.argmax(X, axis=0)
    shared = (ch.A.T @ ch.A) > 0
    for j, k in itertools.combinations(range(4), 2):
        if shared[j, k]:
            assert labels[j] != labels[k]


# --- tabu --------------------------------------------------------------------

def test_tabu_never_worse_than_start():
    for seed in range(4):
        ch = generate_channels(SMALL, seed)
        X0 = dsatur_assign(interference_graph(ch.beta, ch.A))
        res = tabu_refine(X0, ch, SMALL)
        assert res.objective >= frame_objective(X0, ch, SMALL)
        assert res.objective == pytest.approx(frame_objective(res.X, ch, SMALL), rel=1e-12)
        assert res.history[0] == frame_objective(X0, ch, SMALL)


def test_tabu_zero_iterations_returns_start():
    ch = generate_channels(SMALL, 1)
    X0 = np.eye(4)
    res = tabu_refine(X0, ch, SMALL, iterations=0)
    assert np.array_equal(res.X, X0) and res.history == [res.objective]


def test_tabu_matches_oracle_on_small_instances():
    gaps = []
    for i in range(5):
        ch = generate_channels(SMALL, [0, i])
        X0 = dsatur_assign(interference_graph(ch.beta, ch.A))
        got = tabu_refine(X0, ch, SMALL).objective
        best = exhaustive_oracle(ch, SMALL).eta_bar
        assert got <= best + 1e-12
        gaps.append((best - got) / best)
    assert max(gaps) <= 0.02


# --- set partitions and the oracle ---------------------------------------------------

@pytest.mark.parametrize("K", range(1, 8))
def test_set_partitions_bell_numbers(K):
    parts = list(set_partitions(K))
    assert len(parts) == int(sympy.bell(K))
    assert len(set(parts)) == len(parts)
    assert all(canonical_labels(p) == p for p in parts)


def test_set_partitions_empty():
    assert list(set_partitions(0)) == []


def test_oracle_dominates_every_partition():
    ch = generate_channels(SMALL, 9)
    res = exhaustive_oracle(ch, SMALL)
    assert res.n_candidates == 15
    for labels in [(0, 1, 2, 3), (0, 0, 0, 0), (0, 1, 0, 1)]:
        X = compact(labels_to_matrix(labels)).X_o
        assert evaluate_frame(X, ch, SMALL).eta_bar <= res.eta_bar + 1e-12


def test_oracle_refuses_large_K():
    with pytest.raises(ValueError):
        exhaustive_oracle(generate_channels(desk_config(K=8, N_T=1), 0), desk_config(K=8, N_T=1))


def test_oracle_rejects_unknown_power_rule():
    with pytest.raises(ValueError):
        exhaustive_oracle(generate_channels(SMALL, 0), SMALL, power_rule="max")


# --- WMMSE -----------------------------------------------------------------------

@given(st.integers(1, 5), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_per_ap_solve_is_optimal(n, seed):
    rng = np.random.default_rng(seed)
    Qd = rng.uniform(0.1, 2.0, n)
    d = rng.normal(size=n)
    budget = float(rng.uniform(0.1, 3.0))
    q = _per_ap_solve(Qd, d, budget)
    assert np.all(q >= 0) and np.sum(q ** 2) <= budget * (1 + 1e-9)
    f = lambda x: np.sum(Qd * x ** 2 - 2 * d * x)
    for _ in range(200):
        x = np.abs(rng.normal(size=n))
        x *= np.sqrt(budget * rng.uniform()) / np.linalg.norm(x)
        assert f(q) <= f(x) + 1e-9


def _tiny(seed):
    rng = np.random.default_rng(seed)
    G = (rng.normal(size=(2, 2, 2)) + 1j * rng.normal(size=(2, 2, 2))) / np.sqrt(2)
    return G, np.ones((2, 2)), 1.0, 0.1


def test_wmmse_feasible_and_monotone():
    G, A, P_max, noise = _tiny(0)
    res = wmmse_power(G, A, P_max=P_max, noise_ue=noise, n_starts=1)
    assert np.all(res.P >= 0) and np.all(res.P.sum(axis=1) <= P_max * (1 + 1e-9))
    assert np.all(np.diff(res.history) >= -1e-9)
    assert res.sum_rate == pytest.approx(sum_rate(G, res.P, noise))


def test_wmmse_respects_association():
    G, _, P_max, noise = _tiny(1)
    A = np.array([[1, 0], [1, 1]])
    P = wmmse_power(G * A[..., None], A, P_max=P_max, noise_ue=noise).P
    assert P[0, 1] == 0


def test_wmmse_single_link_full_power():
    G = np.array([[[2.0 + 0j]]])
    P = wmmse_power(G, np.ones((1, 1)), P_max=3.0, noise_ue=1.0).P
    assert P[0, 0] == pytest.approx(3.0, rel=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_wmmse_near_coarse_grid(seed):
    G, A, P_max, noise = _tiny(seed)
    wm = wmmse_power(G, A, P_max=P_max, noise_ue=noise).sum_rate
    _, grid = grid_search_power(G, A, P_max, noise, step=0.05)
    assert wm >= 0.99 * grid


def test_grid_search_idle_ap():
    G, _, P_max, noise = _tiny(4)
    A = np.array([[0, 0], [1, 1]])
    P, val = grid_search_power(G * A[..., None], A, P_max, noise, step=0.1)
    assert np.all(P[0] == 0) and val > 0


def test_wmmse_rejects_nonfinite():
    with pytest.raises(ValueError):
        wmmse_power(np.full((1, 1, 1), np.nan), np.ones((1, 1)), P_max=1.0, noise_ue=1.0)


def test_wmmse_beats_equal_power_on_frames():
    ch = generate_channels(SMALL, 3)
    _, G_hat = subframe_state(np.eye(4), ch, SMALL, 0)
    P = wmmse_power(G_hat, ch.A, SMALL, noise_ue=ch.noise_ue).P
    assert sum_rate(G_hat, P, ch.noise_ue) >= sum_rate(G_hat, equal_power(ch.A, SMALL.P_max), ch.noise_ue)


# --- pipelines -----------------------------------------------------------------------

def test_baseline_pipelines_json():
    ch = generate_channels(SMALL, 2)
    res = dsatur_tabu_wmmse(ch, SMALL)
    d = res.to_json()
    assert d["K"] == 4 and len(d["eta"]) == 2 and d["eta_bar"] == pytest.approx(np.mean(d["eta"]))
    assert len(d["X_o"]) == d["tau_p"]
    oracle = oracle_baseline(ch, SMALL)
    assert oracle.frame.eta_bar == pytest.approx(exhaustive_oracle(ch, SMALL).eta_bar)
