"""Datasets, the differentiable net-SE relaxation and the training loops.

The relaxed pipeline mirrors :mod:`cellfree.sim` on real (re, im) tensors:
soft pilot overlaps ``S = X^T X`` and the soft pilot count ``psi(X)`` replace
their binary counterparts, everything else is unchanged, so binary inputs
reproduce the simulator exactly.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import SystemConfig
from .gnn import (PilotGNN, PowerGNN, PowerGraph, build_pilot_graph, build_power_graph,
                  draw_lambda, load_models, save_models)
from .pilot import compact, discretize
from .sim import ChannelSet, complex_normal, evaluate_frame, generate_channels

log = logging.getLogger(__name__)

CLAMP = 1e-6


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# data


@dataclass
class TrainingSample:
    beta: np.ndarray  # (M, K)
    A: np.ndarray  # (M, K)
    H: np.ndarray  # (N_T, M, K, N)
    pilot_noise: np.ndarray  # (N_T, M, K, N)
    noise_ap: float
    noise_ue: float

    def channels(self) -> ChannelSet:
        return ChannelSet(self.beta, self.A, self.H, self.noise_ap, self.noise_ue, self.pilot_noise)


@dataclass
class Dataset:
    """Samples stacked along a leading axis."""

    beta: np.ndarray  # (S, M, K)
    A: np.ndarray  # (S, M, K)
    H: np.ndarray  # (S, N_T, M, K, N)
    pilot_noise: np.ndarray
    noise_ap: float
    noise_ue: float

    def __len__(self):
        return self.beta.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return TrainingSample(self.beta[idx], self.A[idx], self.H[idx], self.pilot_noise[idx],
                                  self.noise_ap, self.noise_ue)
        return Dataset(self.beta[idx], self.A[idx], self.H[idx], self.pilot_noise[idx],
                       self.noise_ap, self.noise_ue)


def generate_dataset(config: SystemConfig, n_samples: int, seed) -> Dataset:
    """Independent topologies per sample, ``N_T`` SSF draws sharing one LSF."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    root = np.random.SeedSequence(seed)
    frames = [generate_channels(config, ss) for ss in root.spawn(n_samples)]
    return Dataset(np.stack([f.beta for f in frames]), np.stack([f.A for f in frames]).astype(float),
                   np.stack([f.H for f in frames]), np.stack([f.pilot_noise for f in frames]),
                   frames[0].noise_ap, frames[0].noise_ue)


# ---------------------------------------------------------------------------
# relaxed physical layer


def soft_psi(X):
    """Soft pilot count of (B, G, K) assignments; (B,)."""
    X = ad.as_tensor(X)
    return (1.0 - ad.prod(1.0 - X, axis=2)).sum(axis=1)


@dataclass
class RelaxedState:
    """Per-subframe quantities of the relaxed pipeline, each (re, im)."""

    G: tuple  # true equivalent channels (B, T, M, K, K)
    G_hat: tuple  # estimated equivalent channels (B, T, M, K, K)
    tau: Tensor  # (B,)
    overhead: Tensor  # (B,) clamped 1 - tau/tau_c
    clamped: np.ndarray  # (B,) True where tau exceeded tau_c


def relaxed_frontend(X, data: Dataset, config: SystemConfig, tau_p=None, pilot_noise=None,
                     verbatim: bool = False) -> RelaxedState:
    """Estimation, RZF and equivalent channels for soft assignments.

    ``X`` is (B, G, K) for the ``B`` samples of ``data``; ``tau_p`` fixes the
    pilot length (otherwise the soft count is used). ``pilot_noise``
    overrides the dataset's standardized pilot noise.
    """
    X = ad.as_tensor(X)
    B, _, K = X.shape
    beta, A = data.beta, data.A
    Z = data.pilot_noise if pilot_noise is None else pilot_noise
    _, T, M, _, N = data.H.shape
    p = config.p_ul
    s2_ap, s2_ue = data.noise_ap, data.noise_ue

    S = ad.einsum("bgk,bgi->bki", X, X)
    tau = soft_psi(X) if tau_p is None else Tensor(np.full(B, float(tau_p)))
    tb = ad.reshape(tau, (B, 1, 1))

    h = np.sqrt(beta)[:, None, :, :, None] * data.H  # (B, T, M, K, N)
    hr, hi = h.real, h.imag
    amp = ad.sqrt(tb * p)  # sqrt(p tau)
    amp5 = ad.reshape(amp, (B, 1, 1, 1, 1))
    yr = ad.einsum("bki,btmin->btmkn", S, hr) * amp5 + math.sqrt(s2_ap) * Z.real
    yi = ad.einsum("bki,btmin->btmkn", S, hi) * amp5 + math.sqrt(s2_ap) * Z.imag

    gram_beta = ad.einsum("bki,bmi->bmk", S, beta)
    scale = p if verbatim else tb * p
    coef = amp * (beta * A) / (gram_beta * scale + s2_ap)  # (B, M, K), zero off A
    coef5 = ad.reshape(coef, (B, 1, M, K, 1))
    er, ei = yr * coef5, yi * coef5  # local estimates (B, T, M, K, N)

    # RZF through the real 2N x 2N form of the complex system
    U = ad.concat([er, ei], axis=-1)  # (B, T, M, K, 2N)
    JU = ad.concat([-1.0 * ei, er], axis=-1)
    reg = (beta * (1.0 - A)).sum(axis=2) + s2_ue / p  # (B, M)
    eye = np.eye(2 * N)
    C = (ad.einsum("btmka,btmkc->btmac", U, U) + ad.einsum("btmka,btmkc->btmac", JU, JU)
         + reg[:, None, :, None, None] * eye)
    W = ad.solve(C, ad.transpose(U, (0, 1, 2, 4, 3)))  # (B, T, M, 2N, K)
    norm2 = (W * W).sum(axis=3, keepdims=True)
    A5 = A[:, None, :, None, :]
    V = W * A5 / ad.sqrt(norm2 + (1.0 - A5))
    vr, vi = V[:, :, :, :N, :], V[:, :, :, N:, :]  # (B, T, M, N, K) over served UE i

    # g[m, i, k] = sum_n conj(h_mkn) v_min
    Gr = ad.einsum("btmkn,btmni->btmik", hr, vr) + ad.einsum("btmkn,btmni->btmik", hi, vi)
    Gi = ad.einsum("btmkn,btmni->btmik", hr, vi) - ad.einsum("btmkn,btmni->btmik", hi, vr)

    Lr = ad.einsum("btmkn,btmni->btmik", er, vr) + ad.einsum("btmkn,btmni->btmik", ei, vi)
    Li = ad.einsum("btmkn,btmni->btmik", er, vi) - ad.einsum("btmkn,btmni->btmik", ei, vr)
    a_k = A[:, None, :, None, :]  # UE k local to AP m
    a_i = A[:, None, :, :, None]  # row i served by AP m
    far = np.sqrt(beta)[:, None, :, None, :] * (1.0 - a_k) * a_i
    Ghr = Lr * (a_k * a_i) + far
    Ghi = Li * (a_k * a_i)

    ratio = tau / float(config.tau_c)
    clamped = ratio.data > 1.0
    overhead = ad.maximum(1.0 - ratio, 0.0)
    return RelaxedState((Gr, Gi), (Ghr, Ghi), tau, overhead, clamped)


def net_se_from_state(state: RelaxedState, P, noise_ue: float):
    """Net-SE per (sample, subframe); ``P`` is (B, M, K) or (B, T, M, K)."""
    Gr, Gi = state.G
    B, T, M, K, _ = Gr.shape
    P = ad.as_tensor(P)
    if P.ndim == 3:
        P = ad.reshape(P, (B, 1, M, K))
    sp = ad.reshape(ad.sqrt(P), (P.shape[0], P.shape[1], M, K, 1))
    ar = (Gr * sp).sum(axis=2)  # (B, T, K_i, K_k)
    ai = (Gi * sp).sum(axis=2)
    power = ad.abs2(ar, ai)
    eye = np.eye(K)
    signal = (power * eye).sum(axis=2)  # (B, T, K)
    interference = ad.maximum(power.sum(axis=2) - signal, 0.0)
    rate = ad.log2(1.0 + signal / (interference + noise_ue)).sum(axis=2)  # (B, T)
    return rate * ad.reshape(state.overhead, (B, 1))


def soft_net_se(X, P, data: Dataset, config: SystemConfig, tau_p=None, pilot_noise=None):
    """Relaxed net-SE (B, T) of soft assignments ``X`` and powers ``P``."""
    state = relaxed_frontend(X, data, config, tau_p, pilot_noise)
    if state.clamped.any():
        log.debug("soft pilot count exceeds tau_c on %d samples", int(state.clamped.sum()))
    return net_se_from_state(state, P, data.noise_ue)


def penalty(X):
    """Binarization penalty ``sum log(x) log(1 - x)`` per sample, entries clamped."""
    Xc = ad.clamp(ad.as_tensor(X), CLAMP, 1.0 - CLAMP)
    return (ad.log(Xc) * ad.log(1.0 - Xc)).sum(axis=(1, 2))


def loss(eta, X, w: float = 0.2):
    """``-(1/N_s) sum_n [mean_t eta_nt - w * penalty_n]``."""
    eta = ad.as_tensor(eta)
    per_sample = eta.mean(axis=1) - penalty(X) * w
    value = -1.0 * per_sample.mean()
    if not np.isfinite(value.data).all():
        bad = int(np.sum(~np.isfinite(eta.data)))
        raise TrainingDiverged(f"non-finite loss ({bad} non-finite net-SE values)")
    return value


def power_graph_from_state(state: RelaxedState, A, P_max: float) -> PowerGraph:
    """Differentiable power graphs for all (sample, subframe) pairs."""
    Ghr, Ghi = state.G_hat
    B, T, M, K, _ = Ghr.shape
    AT = np.broadcast_to(A[:, None], (B, T, M, K)).reshape(B * T, M, K)
    Ghr = ad.reshape(Ghr, (B * T, M, K, K))
    Ghi = ad.reshape(Ghi, (B * T, M, K, K))
    diag = np.eye(K)
    sig_power = (ad.abs2(Ghr, Ghi) * diag).sum(axis=(1, 2, 3))
    count = AT.sum(axis=(1, 2))
    scale = ad.reshape(ad.sqrt(sig_power * (1.0 / count)), (B * T, 1, 1, 1, 1))
    feats = ad.stack([Ghr, Ghi], axis=-1) / ad.maximum(scale, 1e-300)
    return PowerGraph(feats, AT, P_max)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    variant: str = "sts"  # "sts" or "dts"
    n_train: int = 5000
    n_test: int = 100
    batch_size: int = 50
    epochs: int = 20
    lr: float = 0.01
    lr_decay: float = 1.0  # multiplicative per epoch
    w: float = 0.2
    seed: int = 0
    attention: bool = True
    feature_enhancement: bool = True
    fixed_tau: int | None = None  # fixed pilot length z (z candidate sequences)
    pilot_widths: list | None = None
    power_widths: list | None = None
    redraw_pilot_noise: bool = True

    def validate(self):
        if self.variant not in ("sts", "dts"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2 for batch normalization")
        if self.w < 0:
            raise ValueError("penalty weight must be nonnegative")
        if self.fixed_tau is not None and self.fixed_tau < 1:
            raise ValueError("fixed pilot length must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Policy:
    """Trained models plus what is needed to run them on new channels."""

    config: TrainConfig
    pilot: PilotGNN
    power: PowerGNN | None = None
    curve: list = field(default_factory=list)

    @property
    def n_ps(self) -> int:
        return self.config.fixed_tau or 0

    def models(self) -> dict:
        out = {"pilot": self.pilot}
        if self.power is not None:
            out["power"] = self.power
        return out

    def parameters(self) -> dict:
        params = {f"pilot/{k}": v for k, v in self.pilot.parameters().items()}
        if self.power is not None:
            params.update({f"power/{k}": v for k, v in self.power.parameters().items()})
        return params

    def pilot_graph(self, beta, A, config: SystemConfig, rng: np.random.Generator):
        B, _, K = beta.shape
        n_ps = self.config.fixed_tau or K
        lam = draw_lambda(rng, n_ps, K, B) if self.config.feature_enhancement else None
        return build_pilot_graph(beta, A, lam, config.rho_dB, config.P_max, n_ps=n_ps)

    def forward(self, data: Dataset, config: SystemConfig, rng, training: bool,
                pilot_noise=None):
        """Soft assignment, relaxed state and per-subframe net-SE for a batch."""
        graph = self.pilot_graph(data.beta, data.A, config, rng)
        out = self.pilot(graph, training)
        X, P = out if isinstance(out, tuple) else (out, None)
        state = relaxed_frontend(X, data, config, self.config.fixed_tau, pilot_noise)
        if self.power is not None:
            pg = power_graph_from_state(state, data.A, config.P_max)
            B, T = data.H.shape[:2]
            P = ad.reshape(self.power(pg, training), (B, T) + data.A.shape[1:])
        eta = net_se_from_state(state, P, data.noise_ue)
        return X, P, eta, state


def build_policy(tc: TrainConfig) -> Policy:
    tc.validate()
    ss = np.random.SeedSequence([tc.seed, 1])
    s_pilot, s_power = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    if tc.variant == "sts":
        pilot = PilotGNN(tc.pilot_widths, "sts", tc.attention, seed=s_pilot)
        return Policy(tc, pilot)
    pilot = PilotGNN(tc.pilot_widths, "dts_pilot", tc.attention, seed=s_pilot)
    return Policy(tc, pilot, PowerGNN(tc.power_widths, seed=s_power))


def train(config: SystemConfig, tc: TrainConfig, data: Dataset | None = None,
          curve_path=None, progress=None) -> Policy:
    """Unsupervised training of a DTS pair or an STS model.

    Each batch runs the models, the relaxed pipeline and one Adam step over
    every parameter. Pilot noise is redrawn per epoch when requested.
    """
    policy = build_policy(tc)
    if data is None:
        data = generate_dataset(config, tc.n_train, [tc.seed, 2])
    rng = np.random.default_rng([tc.seed, 3])
    opt = ad.Adam(policy.parameters(), lr=tc.lr)
    n = len(data)
    bs = min(tc.batch_size, n)
    step = 0
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        noise = complex_normal(rng, data.pilot_noise.shape) if tc.redraw_pilot_noise else data.pilot_noise
        for start in range(0, n - bs + 1, bs):
            idx = order[start:start + bs]
            batch = data[idx]
            opt.zero_grad()
            X, _, eta, state = policy.forward(batch, config, rng, True, noise[idx])
            value = loss(eta, X, tc.w)
            value.backward()
            opt.step()
            step += 1
            row = {"epoch": epoch, "step": step, "loss": float(value.data),
                   "net_se": float(eta.data.mean()), "tau": float(state.tau.data.mean())}
            policy.curve.append(row)
            if progress is not None:
                progress(row)
        opt.lr *= tc.lr_decay
    if curve_path is not None:
        write_curve(curve_path, policy.curve)
    return policy


def train_sts(config: SystemConfig, tc: TrainConfig | None = None, **kw) -> Policy:
    tc = TrainConfig(variant="sts") if tc is None else tc
    if tc.variant != "sts":
        raise ValueError("train_sts needs variant 'sts'")
    return train(config, tc, **kw)


def train_dts(config: SystemConfig, tc: TrainConfig | None = None, **kw) -> Policy:
    tc = TrainConfig(variant="dts") if tc is None else tc
    if tc.variant != "dts":
        raise ValueError("train_dts needs variant 'dts'")
    return train(config, tc, **kw)


def write_curve(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "step", "loss", "net_se", "tau"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


# ---------------------------------------------------------------------------
# test phase


@dataclass
class EvalResult:
    eta_bar: np.ndarray  # per test sample
    tau_p: np.ndarray
    assignments: list
    powers: list
    seconds: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.eta_bar))


def evaluate_policy(policy: Policy, config: SystemConfig, data: Dataset, seed=0) -> EvalResult:
    """Binary test-phase evaluation through the simulator.

    The soft output is discretized and compacted; the pilot length is the
    number of used sequences (or the fixed length). Powers come from the
    joint model once per frame, or from the power model per subframe using
    the simulator's estimated equivalent channels.
    """
    rng = np.random.default_rng([seed, 4])
    t0 = time.perf_counter()
    etas, taus, assigns, powers = [], [], [], []
    with ad.no_grad():
        graph = policy.pilot_graph(data.beta, data.A, config, rng)
        out = policy.pilot(graph, training=False)
        X_soft, P_all = out if isinstance(out, tuple) else (out, None)
        for b in range(len(data)):
            sample = data[b]
            X = discretize(X_soft.data[b])
            ca = compact(X)
            tau = ca.tau_p if policy.config.fixed_tau is None else policy.config.fixed_tau
            channels = sample.channels()
            if policy.power is None:
                rule = P_all.data[b]
            else:
                def rule(G_hat, A, t, _power=policy.power):
                    graph_t = build_power_graph(G_hat, A, config.P_max)
                    return _power(graph_t, training=False).data[0]
            res = evaluate_frame(ca.X_o, channels, config, power=rule, tau_p=tau)
            etas.append(res.eta_bar)
            taus.append(tau)
            assigns.append(X)
            powers.append(np.array(res.powers))
    return EvalResult(np.array(etas), np.array(taus, float), assigns, powers,
                      time.perf_counter() - t0)


def soft_assignment_sharpness(policy: Policy, config: SystemConfig, data: Dataset, seed=0) -> float:
    """Fraction of soft-assignment columns whose largest entry exceeds 0.9."""
    rng = np.random.default_rng([seed, 4])
    with ad.no_grad():
        out = policy.pilot(policy.pilot_graph(data.beta, data.A, config, rng), training=False)
    X = out[0] if isinstance(out, tuple) else out
    return float(np.mean(X.data.max(axis=1) > 0.9))


def fixed_assignment_eval(X, config: SystemConfig, data: Dataset, power="equal", tau_p=None):
    """Net-SE per sample of one binary assignment applied to every sample."""
    return np.array([evaluate_frame(X, data[b].channels(), config, power=power, tau_p=tau_p).eta_bar
                     for b in range(len(data))])


# ---------------------------------------------------------------------------
# checkpoints


def save_policy(path, policy: Policy, config: SystemConfig | None = None) -> None:
    meta = {"train": policy.config.to_dict()}
    if config is not None:
        meta["system"] = config.to_dict()
    save_models(path, policy.models(), meta)


def load_policy(path) -> tuple[Policy, dict]:
    """Restore a policy; returns it with the checkpoint metadata."""
    models, meta = load_models(path)
    tc = TrainConfig.from_dict(meta["train"])
    if "pilot" not in models:
        raise ValueError(f"{path} holds no pilot model")
    return Policy(tc, models["pilot"], models.get("power")), meta
