"""Invariant checks shared by the ``eval properties`` command.

Each check returns ``(passed, detail)``; :func:`run_all` collects them.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import desk_config
from .gnn import PilotGNN, PowerGNN, build_pilot_graph, build_power_graph, draw_lambda
from .pilot import PermutationSpec, labels_to_matrix
from .sim import complex_normal, evaluate_frame, generate_channels, mmse_estimate, nmse, received_pilot, subframe_state
from .solvers import dsatur_assign, exhaustive_oracle, interference_graph, tabu_refine
from .training import Dataset, TrainConfig, build_policy, generate_dataset, loss, soft_net_se


def random_power_inputs(rng, M, K, B=2):
    A = (rng.uniform(size=(B, M, K)) < 0.5).astype(float)
    A[np.arange(B)[:, None], rng.integers(0, M, size=(B, K)), np.arange(K)] = 1.0
    G = rng.normal(size=(B, M, K, K)) + 1j * rng.normal(size=(B, M, K, K))
    return G * A[:, :, :, None], A


def random_pilot_inputs(rng, M, K, B=2):
    beta_db = rng.uniform(-140.0, -80.0, size=(B, M, K))
    A = (beta_db > -110.0).astype(float)
    A[np.arange(B)[:, None], np.argmax(beta_db, axis=1), np.arange(K)] = 1.0
    return 10.0 ** (beta_db / 10.0), A


def power_equivariance(rng, trials=10, tol=1e-6):
    worst = 0.0
    for _ in range(trials):
        M, K = rng.integers(1, 4), rng.integers(1, 6)
        G, A = random_power_inputs(rng, M, K)
        model = PowerGNN(seed=int(rng.integers(1 << 31)))
        perm = PermutationSpec.random(rng, M, K)
        P = model(build_power_graph(G, A, 1.0), training=True).data
        Gp = np.stack([perm.equivalent(g) for g in G])
        Ap = np.stack([perm.ap_ue(a) for a in A])
        Pp = model(build_power_graph(Gp, Ap, 1.0), training=True).data
        expect = np.stack([perm.ap_ue(p) for p in P])
        worst = max(worst, float(np.abs(Pp - expect).max()))
    return worst < tol, f"max deviation {worst:.3g}"


def _pilot_outputs(model, beta, A, lam):
    out = model(build_pilot_graph(beta, A, lam, -120.0, 1.0), training=True)
    return out if isinstance(out, tuple) else (out,)


def pilot_equivariance(rng, variant="dts_pilot", trials=10, tol=1e-6):
    worst = 0.0
    for _ in range(trials):
        M, K = rng.integers(1, 4), rng.integers(1, 6)
        beta, A = random_pilot_inputs(rng, M, K)
        lam = draw_lambda(rng, K, K, 2)
        model = PilotGNN(variant=variant, seed=int(rng.integers(1 << 31)))
        perm = PermutationSpec.random(rng, M, K)
        ref = _pilot_outputs(model, beta, A, lam)
        got = _pilot_outputs(model, np.stack([perm.ap_ue(b) for b in beta]),
                             np.stack([perm.ap_ue(a) for a in A]),
                             np.stack([perm.ps_ue(x) for x in lam]))
        worst = max(worst, float(np.abs(got[0].data - np.stack([perm.ps_ue(x) for x in ref[0].data])).max()))
        if variant == "sts":
            worst = max(worst, float(np.abs(got[1].data - np.stack([perm.ap_ue(p) for p in ref[1].data])).max()))
    return worst < tol, f"max deviation {worst:.3g}"


def uniform_without_fe(rng, trials=10):
    ok = True
    for _ in range(trials):
        M, K = rng.integers(1, 4), rng.integers(2, 7)
        beta, A = random_pilot_inputs(rng, M, K)
        model = PilotGNN(variant="sts", seed=int(rng.integers(1 << 31)))
        X = _pilot_outputs(model, beta, A, None)[0].data
        ok &= bool(np.all(X == 1.0 / K))
    return ok, "pilot columns exactly uniform" if ok else "non-uniform column found"


def duplicate_columns(rng, trials=10, fe=False):
    """Fraction of draws where two duplicated UEs get identical columns."""
    same = 0
    for _ in range(trials):
        M, K = rng.integers(1, 4), rng.integers(2, 7)
        beta, A = random_pilot_inputs(rng, M, K)
        beta[:, :, 1], A[:, :, 1] = beta[:, :, 0], A[:, :, 0]
        lam = draw_lambda(rng, K, K, 2) if fe else None
        model = PilotGNN(variant="dts_pilot", seed=int(rng.integers(1 << 31)))
        X = _pilot_outputs(model, beta, A, lam)[0].data
        same += bool(np.array_equal(X[:, :, 0], X[:, :, 1]))
    return same / trials


def end_to_end_gradient(seed=0, tol=1e-3):
    cfg = desk_config(M=2, K=2, N=1, N_T=1, tau_c=10)
    data = generate_dataset(cfg, 2, seed)
    worst = 0.0
    for variant in ("sts", "dts"):
        # width-1 hidden layers; the joint head needs two output channels
        pilot = [1, 2] if variant == "sts" else [1, 1]
        tc = TrainConfig(variant=variant, seed=seed, pilot_widths=pilot, power_widths=[1, 1])
        policy = build_policy(tc)

        def objective():
            rng = np.random.default_rng(seed)
            X, _, eta, _ = policy.forward(data, cfg, rng, training=True)
            return loss(eta, X)

        errs = ad.check_gradients(objective, policy.parameters(), h=1e-5)
        worst = max(worst, max(errs.values()))
    return worst < tol, f"max relative error {worst:.3g}"


def power_constraints(rng, trials=100, tol=1e-9):
    worst = -np.inf
    col = 0.0
    for _ in range(trials):
        M, K = rng.integers(1, 4), rng.integers(1, 6)
        G, A = random_power_inputs(rng, M, K)
        P_max = float(rng.uniform(0.1, 50.0))
        P = PowerGNN(seed=int(rng.integers(1 << 31)))(build_power_graph(G, A, P_max)).data
        worst = max(worst, float((P.sum(axis=2) - P_max).max()))
        beta, A = random_pilot_inputs(rng, M, K)
        X, P2 = PilotGNN(variant="sts", seed=int(rng.integers(1 << 31)))(
            build_pilot_graph(beta, A, draw_lambda(rng, K, K, 2), -120.0, P_max))
        worst = max(worst, float((P2.data.sum(axis=2) - P_max).max()))
        col = max(col, float(np.abs(X.data.sum(axis=1) - 1.0).max()))
    return worst <= tol and col <= 1e-12, f"max budget excess {worst:.3g}, column error {col:.3g}"


def relaxation_consistency(rng, trials=10, tol=1e-12):
    cfg = desk_config(N_T=2)
    data = generate_dataset(cfg, trials, int(rng.integers(1 << 31)))
    worst = 0.0
    for b in range(trials):
        X = labels_to_matrix(rng.integers(0, cfg.K, size=cfg.K), cfg.K)
        P = rng.uniform(size=(cfg.M, cfg.K)) * data.A[b] * cfg.P_max / cfg.K
        soft = soft_net_se(X[None], P[None], data[[b]], cfg).data[0]
        ref = evaluate_frame(X, data[b].channels(), cfg, power=P).etas
        worst = max(worst, float(np.abs(soft - ref).max()))
    return worst <= tol, f"max deviation {worst:.3g}"


def ps_relabel_invariance(rng, trials=10, tol=1e-9):
    cfg = desk_config(N_T=2)
    worst = 0.0
    for _ in range(trials):
        ch = generate_channels(cfg, int(rng.integers(1 << 31)))
        X = labels_to_matrix(rng.integers(0, cfg.K, size=cfg.K), cfg.K)
        perm = PermutationSpec.random(rng, cfg.M, cfg.K)
        a = evaluate_frame(X, ch, cfg).eta_bar
        b = evaluate_frame(perm.ps(X), ch, cfg).eta_bar
        worst = max(worst, abs(a - b))
    return worst <= tol, f"max deviation {worst:.3g}"


def tabu_vs_oracle(seed=0, instances=20, tol=0.02):
    cfg = desk_config(M=2, N=2, K=4)
    worst = 0.0
    for i in range(instances):
        ch = generate_channels(cfg, [seed, i])
        X0 = dsatur_assign(interference_graph(ch.beta, ch.A))
        got = tabu_refine(X0, ch, cfg).objective
        best = exhaustive_oracle(ch, cfg).eta_bar
        worst = max(worst, (best - got) / best)
    return worst <= tol, f"worst relative gap {worst:.3g}"


def nmse_monte_carlo(seed=0, draws=10_000, tol=0.02, labels=(0, 0, 1, 1)):
    """Monte-Carlo estimation error of every local channel vs the closed form.

    ``labels`` gives the pilot sequence of each UE; the pilot length is the
    number of distinct sequences.
    """
    cfg = desk_config(M=2, K=len(labels), N=4, N_T=1)
    rng = np.random.default_rng(seed)
    ch = generate_channels(cfg, seed)
    X = labels_to_matrix(list(labels), cfg.K)
    A = np.ones_like(ch.A)
    err = np.zeros((cfg.M, cfg.K))
    for _ in range(draws):
        ch.H = complex_normal(rng, (1, cfg.M, cfg.K, cfg.N))
        ch.pilot_noise = complex_normal(rng, ch.H.shape)
        h_hat = mmse_estimate(received_pilot(X, ch, cfg, 0), X, ch.beta, A, cfg,
                              noise_ap=ch.noise_ap)
        true = np.sqrt(ch.beta)[..., None] * ch.H[0]
        err += np.sum(np.abs(h_hat - true) ** 2, axis=-1)
    mc = err / (draws * cfg.N) / ch.beta
    tau = float(len(set(labels)))
    closed = np.array([[nmse(X, ch.beta, m, k, cfg, tau_p=tau, noise_ap=ch.noise_ap)
                        for k in range(cfg.K)] for m in range(cfg.M)])
    worst = float(np.max(np.abs(mc - closed) / closed))
    return worst <= tol, f"worst relative mismatch {worst:.3g}"


def run_all(seed: int = 0, quick: bool = False) -> list:
    rng = np.random.default_rng(seed)
    n = 3 if quick else 20
    report = []

    def record(name, result):
        passed, detail = result
        report.append((name, bool(passed), detail))

    record("power equivariance", power_equivariance(rng, n))
    record("pilot equivariance", pilot_equivariance(rng, "dts_pilot", n))
    record("joint equivariance", pilot_equivariance(rng, "sts", n))
    record("uniform pilot columns without FE", uniform_without_fe(rng, n))
    frac = duplicate_columns(rng, n, fe=False)
    record("duplicated UEs share columns without FE", (frac == 1.0, f"{frac:.0%} identical"))
    frac = duplicate_columns(rng, n, fe=True)
    record("FE separates duplicated UEs", (frac <= 0.01, f"{frac:.0%} identical"))
    record("end-to-end gradient", end_to_end_gradient(seed))
    record("power and assignment constraints", power_constraints(rng, 10 if quick else 100))
    record("relaxation consistency", relaxation_consistency(rng, n))
    record("pilot relabeling invariance", ps_relabel_invariance(rng, n))
    record("tabu vs oracle", tabu_vs_oracle(seed, 3 if quick else 20))
    record("NMSE closed form", nmse_monte_carlo(seed, 2000 if quick else 10_000, 0.1 if quick else 0.02))
    return report
