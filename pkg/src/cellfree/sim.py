"""Topology, channels and the downlink physical-layer chain.

Channel vectors use complex128 arrays with the antenna axis last. The SSF
tensor ``H`` has shape ``(N_T, M, K, N)``; an equivalent-channel tensor ``G``
for one subframe has shape ``(M, K, K)`` indexed ``[m, i, k]`` = channel from
the antenna of AP ``m`` that serves UE ``i`` to UE ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import ConfigError, Scenario, SystemConfig
from .pilot import gram, psi

SQRT_HALF = math.sqrt(0.5)


@dataclass
class Topology:
    ap_positions: np.ndarray  # (M, 2)
    ue_positions: np.ndarray  # (K, 2)
    distances: np.ndarray  # (M, K), 3D distance in metres


@dataclass
class ChannelSet:
    beta: np.ndarray  # (M, K) linear LSF gain
    A: np.ndarray  # (M, K) 0/1 association
    H: np.ndarray  # (N_T, M, K, N) standard complex Gaussian SSF
    noise_ap: float
    noise_ue: float
    pilot_noise: np.ndarray | None = None  # (N_T, M, K, N) standard complex Gaussian
    topology: Topology | None = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    @property
    def N(self) -> int:
        return self.H.shape[-1]

    @property
    def N_T(self) -> int:
        return self.H.shape[0]


def _hex_lattice(count: int, spacing: float) -> np.ndarray:
    """The ``count`` hexagonal-lattice sites closest to the origin."""
    rings = 0
    while 3 * rings * (rings + 1) + 1 < count:
        rings += 1
    a1 = np.array([spacing, 0.0])
    a2 = np.array([spacing / 2.0, spacing * math.sqrt(3.0) / 2.0])
    pts = []
    for i in range(-rings, rings + 1):
        for j in range(-rings, rings + 1):
            if abs(i + j) <= rings:
                pts.append(i * a1 + j * a2)
    pts = np.array(pts)
    radius = np.round(np.hypot(pts[:, 0], pts[:, 1]), 9)
    angle = np.round(np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * math.pi), 9)
    order = np.lexsort((angle, radius))
    return pts[order[:count]]


def _in_hexagon(points: np.ndarray, circumradius: float) -> np.ndarray:
    # pointy-side hexagon matching the lattice: flat sides facing neighbours
    x = np.abs(points[:, 0])
    y = np.abs(points[:, 1])
    inradius = circumradius * math.sqrt(3.0) / 2.0
    return (x <= inradius) & (x / 2.0 + y * math.sqrt(3.0) / 2.0 <= inradius)


def generate_topology(config: SystemConfig, seed) -> Topology:
    """Place APs on a hexagonal layout and drop UEs uniformly in its cells.

    Each UE picks a cell uniformly (cells have equal area) and a uniform point
    inside it; drops violating the minimum AP distance are redrawn.
    """
    sc = config.scenario
    cell_inradius = sc.isd_m / 2.0
    if sc.min_distance_m >= cell_inradius:
        raise ConfigError(
            f"min AP-UE distance {sc.min_distance_m} m does not fit in a cell of ISD {sc.isd_m} m")
    rng = np.random.default_rng(seed)
    aps = _hex_lattice(config.M, sc.isd_m)
    circumradius = sc.isd_m / math.sqrt(3.0)
    ues = np.empty((config.K, 2))
    for k in range(config.K):
        while True:
            cell = rng.integers(config.M)
            offset = rng.uniform(-circumradius, circumradius, size=2)
            if not _in_hexagon(offset[None], circumradius)[0]:
                continue
            pos = aps[cell] + offset
            if np.min(np.hypot(*(aps - pos).T)) >= sc.min_distance_m:
                ues[k] = pos
                break
    d2 = np.hypot(aps[:, None, 0] - ues[None, :, 0], aps[:, None, 1] - ues[None, :, 1])
    dist = np.sqrt(d2 ** 2 + (sc.ap_height_m - sc.ue_height_m) ** 2)
    return Topology(aps, ues, dist)


def lsf_gain(distance_m, scenario: Scenario, shadowing_db=0.0, f_c: float = 6.0):
    """Linear LSF gain ``10**(PL_dB/10)`` with
    ``PL_dB = -32.4 - 20 log10(f_c) - exponent*log10(s) + shadowing``."""
    s = np.asarray(distance_m, dtype=float)
    if np.any(s <= 0):
        raise ValueError("distance must be positive")
    pl_db = -32.4 - 20.0 * math.log10(f_c) - scenario.pathloss_exponent * np.log10(s) + shadowing_db
    return 10.0 ** (pl_db / 10.0)


def noise_power(config: SystemConfig) -> float:
    """Thermal noise ``N0 + 10 log10(B) + N_F`` (dBm) in watts."""
    return config.noise_power


def associate(beta: np.ndarray, rho: float) -> np.ndarray:
    """Strongest AP plus every AP with ``beta >= rho``."""
    beta = np.asarray(beta, dtype=float)
    A = (beta >= rho).astype(np.int64)
    A[np.argmax(beta, axis=0), np.arange(beta.shape[1])] = 1
    return A


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return SQRT_HALF * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_channels(config: SystemConfig, seed=None) -> ChannelSet:
    """One frame of channels: topology, shadowed LSF, association, SSF and
    the standardized pilot-noise realizations for every subframe."""
    if seed is None:
        seed = config.rng_seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    topo_ss, shadow_ss, ssf_ss, noise_ss = ss.spawn(4)
    topo = generate_topology(config, topo_ss)
    shadow = np.random.default_rng(shadow_ss).normal(
        0.0, config.scenario.shadowing_std_db, size=(config.M, config.K))
    beta = lsf_gain(topo.distances, config.scenario, shadow, config.f_c)
    A = associate(beta, config.rho)
    shape = (config.N_T, config.M, config.K, config.N)
    H = complex_normal(np.random.default_rng(ssf_ss), shape)
    Z = complex_normal(np.random.default_rng(noise_ss), shape)
    sigma2 = config.noise_power
    return ChannelSet(beta, A, H, sigma2, sigma2, Z, topo)


def _check_tau(X: np.ndarray, tau_p: float | None) -> float:
    used = psi(X)
    if tau_p is None:
        return used
    if tau_p < used - 1e-9:
        raise ValueError(f"tau_p={tau_p} is smaller than the {used} assigned pilot sequences")
    return float(tau_p)


def received_pilot(X, channels: ChannelSet, config: SystemConfig, t: int,
                   tau_p: float | None = None, seed=None) -> np.ndarray:
    """Despread pilot observations ``y[m, k]`` for subframe ``t``; (M, K, N).

    Noise comes from ``channels.pilot_noise`` unless a ``seed`` is given.
    """
    X = np.asarray(X, dtype=float)
    tau = _check_tau(X, tau_p)
    S = gram(X)
    h = np.sqrt(channels.beta)[..., None] * channels.H[t]
    signal = math.sqrt(config.p_ul * tau) * np.einsum("ki,min->mkn", S, h)
    if seed is not None:
        z = complex_normal(np.random.default_rng(seed), h.shape)
    elif channels.pilot_noise is not None:
        z = channels.pilot_noise[t]
    else:
        z = np.zeros_like(h)
    return signal + math.sqrt(channels.noise_ap) * z


def mmse_estimate(Y, X, beta, A, config: SystemConfig, tau_p: float | None = None,
                  noise_ap: float | None = None, R_diag=None, verbatim: bool = False) -> np.ndarray:
    """MMSE estimates of the local channels ``sqrt(beta) h``; (M, K, N).

    With diagonal correlation the matrix inverse reduces to a per-antenna
    coefficient. ``verbatim=True`` drops the pilot-length factor from the
    Gram term (the literal estimator; biased when ``tau_p > 1``).
    Entries for unassociated pairs are zero.
    """
    X = np.asarray(X, dtype=float)
    tau = _check_tau(X, tau_p)
    sigma2 = config.noise_power if noise_ap is None else noise_ap
    p = config.p_ul
    M, K, N = Y.shape
    R = (np.broadcast_to(np.asarray(beta, float)[..., None], (M, K, N))
         if R_diag is None else np.asarray(R_diag, float))
    S = gram(X)
    gram_term = np.einsum("ki,min->mkn", S, R)
    scale = p if verbatim else tau * p
    coef = math.sqrt(p * tau) * R / (scale * gram_term + sigma2)
    return np.asarray(A)[..., None] * coef * Y


def nmse(X, beta, m: int, k: int, config: SystemConfig, tau_p: float = 1.0,
         noise_ap: float | None = None) -> float:
    """Closed-form normalized estimation error of channel (m, k).

    ``tau_p`` multiplies the uplink power (pilot energy); ``tau_p=1`` gives
    the textbook expression with ``p_ul`` as the per-pilot energy.
    """
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    sigma2 = config.noise_power if noise_ap is None else noise_ap
    S = gram(X)
    denom = np.sum(S[k] * beta[m, k] * beta[m]) + sigma2 * beta[m, k] / (config.p_ul * tau_p)
    return float(1.0 - beta[m, k] ** 2 / denom)


def rzf_beamforming(h_hat, beta, A, config: SystemConfig, noise_ue: float | None = None,
                    regularizer: float | None = None) -> np.ndarray:
    """Distributed regularized zero-forcing, unit-norm per served UE; (M, K, N).

    AP ``m`` inverts ``sum_{i in A_m} h_i h_i^H + (sum_{j not in A_m} beta_mj
    + sigma2_UE/p_ul) I``. ``regularizer`` replaces the scalar diagonal term.
    The Hermitian system is solved in its real ``2N x 2N`` form.
    """
    A = np.asarray(A, dtype=float)
    beta = np.asarray(beta, dtype=float)
    M, K, N = h_hat.shape
    sigma2 = config.noise_power if noise_ue is None else noise_ue
    er = h_hat.real * A[..., None]
    ei = h_hat.imag * A[..., None]
    if regularizer is None:
        reg = (beta * (1.0 - A)).sum(axis=1) + sigma2 / config.p_ul
    else:
        reg = np.full(M, float(regularizer))
    V = _rzf_real(er, ei, A, reg)
    return (V[:, :N, :] + 1j * V[:, N:, :]).transpose(0, 2, 1)


def _rzf_real(er, ei, A, reg):
    """Unit-norm RZF directions in real form, (M, 2N, K); zero for unserved UEs."""
    N = er.shape[-1]
    U = np.concatenate([er, ei], axis=-1)
    JU = np.concatenate([-1.0 * ei, er], axis=-1)
    C = (np.einsum("mka,mkc->mac", U, U) + np.einsum("mka,mkc->mac", JU, JU)
         + reg[:, None, None] * np.eye(2 * N))
    W = np.linalg.solve(C, U.transpose(0, 2, 1))
    norm2 = (W * W).sum(axis=1, keepdims=True)
    A3 = A[:, None, :]
    return W * A3 / np.sqrt(norm2 + (1.0 - A3))


def _conj_inner(ar, ai, V):
    """``sum_n conj(a_mkn) v_min`` as (re, im) arrays indexed [m, i, k]."""
    Vt = V.transpose(0, 2, 1)
    vr, vi = np.ascontiguousarray(Vt.real), np.ascontiguousarray(Vt.imag)
    re = np.einsum("mkn,mni->mik", ar, vr) + np.einsum("mkn,mni->mik", ai, vi)
    im = np.einsum("mkn,mni->mik", ar, vi) - np.einsum("mkn,mni->mik", ai, vr)
    return re, im


def equivalent_channels(channels: ChannelSet, t: int, V: np.ndarray) -> np.ndarray:
    """True equivalent channels ``g[m, i, k] = (sqrt(beta_mk) h_mk)^H v_mi``."""
    h = np.sqrt(channels.beta)[..., None] * channels.H[t]
    re, im = _conj_inner(h.real, h.imag, V)
    return re + 1j * im


def estimated_equivalent_channels(h_hat: np.ndarray, V: np.ndarray, beta, A) -> np.ndarray:
    """Equivalent channels as seen by the APs.

    Local UEs use ``h_hat^H v``; unassociated UEs get ``sqrt(beta)``; rows of
    unserved UEs are zero.
    """
    A = np.asarray(A, dtype=float)
    lr, li = _conj_inner(h_hat.real, h_hat.imag, V)
    a_k = A[:, None, :]
    a_i = A[:, :, None]
    far = np.sqrt(np.asarray(beta, float))[:, None, :] * (1.0 - a_k) * a_i
    return (lr * (a_k * a_i) + far) + 1j * (li * (a_k * a_i))


def sinr(G: np.ndarray, P: np.ndarray, noise_ue: float) -> np.ndarray:
    """Per-UE downlink SINR from equivalent channels (M, K, K) and powers (M, K)."""
    G = np.asarray(G)
    sp = np.sqrt(np.maximum(np.asarray(P, dtype=float), 0.0))[:, :, None]
    ar = (G.real * sp).sum(axis=0)
    ai = (G.imag * sp).sum(axis=0)
    power = ar ** 2 + ai ** 2
    signal = (power * np.eye(power.shape[0])).sum(axis=0)
    interference = np.maximum(power.sum(axis=0) - signal, 0.0)
    return signal / (interference + noise_ue)


def sinr_and_net_se(G, P, tau_p: float, tau_c: float, noise_ue: float):
    """``(gamma, eta)`` with ``eta = (1 - tau_p/tau_c) sum log2(1 + gamma)``."""
    if tau_p > tau_c:
        raise ValueError(f"tau_p={tau_p} exceeds tau_c={tau_c}")
    gamma = sinr(G, P, noise_ue)
    eta = float(np.log2(1.0 + gamma).sum() * (1.0 - tau_p / tau_c))
    return gamma, eta


def avg_net_se(etas: Sequence[float]) -> float:
    if len(etas) == 0:
        raise ValueError("need at least one subframe")
    return float(np.mean(etas))


def equal_power(A, P_max: float) -> np.ndarray:
    """Split each AP's budget evenly among its associated UEs."""
    A = np.asarray(A, dtype=float)
    counts = A.sum(axis=1, keepdims=True)
    return np.divide(P_max * A, counts, out=np.zeros_like(A), where=counts > 0)


PowerRule = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


@dataclass
class FrameResult:
    etas: list
    tau_p: float
    powers: list

    @property
    def eta_bar(self) -> float:
        return avg_net_se(self.etas)


def subframe_state(X, channels: ChannelSet, config: SystemConfig, t: int,
                   tau_p: float | None = None, verbatim: bool = False):
    """Estimation and beamforming for one subframe: ``(G, G_hat)``."""
    Y = received_pilot(X, channels, config, t, tau_p)
    h_hat = mmse_estimate(Y, X, channels.beta, channels.A, config, tau_p,
                          noise_ap=channels.noise_ap, verbatim=verbatim)
    V = rzf_beamforming(h_hat, channels.beta, channels.A, config, noise_ue=channels.noise_ue)
    G = equivalent_channels(channels, t, V)
    G_hat = estimated_equivalent_channels(h_hat, V, channels.beta, channels.A)
    return G, G_hat


def evaluate_frame(X, channels: ChannelSet, config: SystemConfig, power="equal",
                   tau_p: float | None = None, subframes: int | None = None,
                   verbatim: bool = False) -> FrameResult:
    """Net-SE of a binary pilot assignment over the frame's subframes.

    ``power`` is ``"equal"``, a fixed (M, K) matrix, an (N_T, M, K) array or a
    callable ``(G_hat, A, t) -> P`` evaluated per subframe.
    """
    X = np.asarray(X, dtype=float)
    tau = _check_tau(X, tau_p)
    T = channels.N_T if subframes is None else min(subframes, channels.N_T)
    etas, powers = [], []
    for t in range(T):
        G, G_hat = subframe_state(X, channels, config, t, tau, verbatim)
        if isinstance(power, str):
            if power != "equal":
                raise ValueError(f"unknown power rule {power!r}")
            P = equal_power(channels.A, config.P_max)
        elif callable(power):
            P = power(G_hat, channels.A, t)
        else:
            P = np.asarray(power, dtype=float)
            if P.ndim == 3:
                P = P[t]
        _, eta = sinr_and_net_se(G, P, tau, config.tau_c, channels.noise_ue)
        etas.append(eta)
        powers.append(P)
    return FrameResult(etas, tau, powers)
