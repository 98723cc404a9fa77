"""Edge-GNNs for power allocation, pilot assignment and the joint policy.

All graph tensors carry a leading batch axis. Pilot graphs hold AP-UE edge
representations ``(B, M, K, F)`` and PS-UE representations ``(B, G, K, F)``
(``G`` candidate pilot sequences). Power graphs hold AN-UE representations
``(B, M, K, K, F)`` indexed ``[m, i, k]`` = edge from the antenna of AP ``m``
serving UE ``i`` to UE ``k``; the entry exists iff ``a_mi = 1``. Edges with
``i == k`` are signal (SIG) edges, the rest interference (INF) edges.

Neighbour sums exclude the edge itself by subtracting it from a full sum, so
edges with identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, checkpoint

DEFAULT_WIDTHS = {
    "dts_pilot": [8, 8, 8, 8, 8, 8, 1],
    "dts_power": [16, 16, 16, 2],
    "sts": [8, 8, 8, 8, 8, 8, 2],
}

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, None: lambda x: x, "identity": lambda x: x}


def _batched(x, ndim: int) -> np.ndarray:
    x = np.asarray(x)
    return x[None] if x.ndim == ndim else x


# ---------------------------------------------------------------------------
# graphs


@dataclass
class PowerGraph:
    features: np.ndarray  # (B, M, K, K, 2) [Re, Im] of the normalized equivalent channels
    A: np.ndarray  # (B, M, K)
    P_max: float

    @property
    def edge_mask(self) -> np.ndarray:
        K = self.A.shape[-1]
        return np.broadcast_to(self.A[:, :, :, None], self.A.shape + (K,)).astype(float)

    @property
    def sig_mask(self) -> np.ndarray:
        return self.edge_mask * np.eye(self.A.shape[-1])

    @property
    def inf_mask(self) -> np.ndarray:
        return self.edge_mask * (1.0 - np.eye(self.A.shape[-1]))

    def edge_counts(self) -> tuple[int, int]:
        """(SIG, INF) edge counts of the first graph in the batch."""
        return int(self.sig_mask[0].sum()), int(self.inf_mask[0].sum())


def build_power_graph(G_hat, A, P_max: float = 1.0, normalize: bool = True) -> PowerGraph:
    """Power graph from estimated equivalent channels (M, K, K) or a batch.

    With ``normalize`` the features of each graph are divided by the RMS
    magnitude of its SIG features, a permutation-invariant scale.
    """
    G_hat = _batched(G_hat, 3)
    A = _batched(A, 2).astype(float)
    if np.any(A.sum(axis=1) == 0):
        raise ValueError("every UE needs at least one serving AP")
    mask = A[:, :, :, None]
    G_hat = G_hat * mask
    if normalize:
        diag = np.einsum("bmkk->bmk", G_hat)
        power = (np.abs(diag) ** 2 * A).sum(axis=(1, 2)) / A.sum(axis=(1, 2))
        scale = np.sqrt(np.where(power > 0, power, 1.0))
        G_hat = G_hat / scale[:, None, None, None]
    feats = np.stack([G_hat.real, G_hat.imag], axis=-1)
    return PowerGraph(feats, A, P_max)


@dataclass
class PilotGraph:
    ap_ue: np.ndarray  # (B, M, K, 2) features [beta feature, a_mk]
    ps_ue: np.ndarray  # (B, G, K, 1) artificial features lambda_gk (zeros without FE)
    A: np.ndarray  # (B, M, K)
    P_max: float

    @property
    def n_ps(self) -> int:
        return self.ps_ue.shape[1]

    def edge_counts(self) -> tuple[int, int]:
        """(AP-UE, PS-UE) edge counts per graph."""
        return self.ap_ue.shape[1] * self.ap_ue.shape[2], self.ps_ue.shape[1] * self.ps_ue.shape[2]


def beta_features(beta, ref_dB: float | None) -> np.ndarray:
    """LSF edge feature: ``(10 log10 beta - ref_dB) / 10``, or raw beta if no reference."""
    beta = np.asarray(beta, dtype=float)
    if ref_dB is None:
        return beta
    return (10.0 * np.log10(beta) - ref_dB) / 10.0


def draw_lambda(rng: np.random.Generator, n_ps: int, K: int, batch: int | None = None) -> np.ndarray:
    shape = (n_ps, K) if batch is None else (batch, n_ps, K)
    return rng.uniform(0.0, 1.0, size=shape)


def build_pilot_graph(beta, A, lam=None, ref_dB: float | None = None, P_max: float = 1.0,
                      n_ps: int | None = None) -> PilotGraph:
    """Pilot/joint graph. ``lam=None`` disables feature enhancement (zero PS-UE features)."""
    beta = _batched(beta, 2)
    A = _batched(A, 2).astype(float)
    B, M, K = beta.shape
    ap = np.stack([beta_features(beta, ref_dB), A], axis=-1)
    if lam is None:
        ps = np.zeros((B, K if n_ps is None else n_ps, K, 1))
    else:
        lam = _batched(lam, 2)
        if lam.shape[0] != B or lam.shape[2] != K:
            raise ValueError(f"lambda of shape {lam.shape} does not fit {B} graphs with K={K}")
        ps = lam[..., None].astype(float)
    return PilotGraph(ap, ps, A, P_max)


# ---------------------------------------------------------------------------
# update functions


def power_output(scores, A, P_max: float):
    """Per-AP feasible powers: ``P_max * q / max(1, sum_{k in A_m} q)`` with ``q = sigmoid(score)``."""
    A = np.asarray(A, dtype=float)
    q = ad.sigmoid(scores) * A
    total = ad.maximum(q.sum(axis=2, keepdims=True), 1.0)
    return q * (P_max / total)


def pilot_output(logits):
    """Column softmax over the pilot-sequence axis of (B, G, K) logits."""
    return ad.softmax(logits, axis=1)


def ap_ue_update(Da, Q, U1, U2, activation="relu", norm=None):
    """AP-UE edges: own term plus means over other APs (same UE) and other UEs (same AP)."""
    Da = ad.as_tensor(Da)
    _, M, K, _ = Da.shape
    other_aps = (Da.sum(axis=1, keepdims=True) - Da) * (1.0 / M)
    other_ues = (Da.sum(axis=2, keepdims=True) - Da) * (1.0 / K)
    pre = ad.linear(Da, Q) + ad.linear(other_aps, U1) + ad.linear(other_ues, U2)
    if norm is not None:
        pre = norm(pre)
    return ACTIVATIONS[activation](pre)


def attention_score(Da, U4, U5, activation="tanh"):
    """Contamination-aware scores ``c[b, j, k, :]`` from AP-UE representations."""
    Da = ad.as_tensor(Da)
    M = Da.shape[1]
    left = ad.linear(Da, U4)
    right = ad.linear(Da, U5)
    sim = ad.einsum("bmjf,bmkf->bjkf", left, right) * (1.0 / M)
    return ACTIVATIONS[activation](sim)


def ps_ue_update(Dp, Da, Q, U1, U2, U3, scores=None, activation="relu", norm=None):
    """PS-UE edges: own term, mean over AP-UE edges of the UE, mean over the
    other PSs of the UE and an attention-gated mean over the other UEs of the PS."""
    Dp, Da = ad.as_tensor(Dp), ad.as_tensor(Da)
    _, G, K, _ = Dp.shape
    from_aps = ad.linear(Da.mean(axis=1, keepdims=True), U1)
    other_ps = (Dp.sum(axis=1, keepdims=True) - Dp) * (1.0 / G)
    msg = ad.linear(Dp, U3)
    if scores is None:
        other_ues = (msg.sum(axis=2, keepdims=True) - msg) * (1.0 / K)
    else:
        total = ad.einsum("bjkf,bgjf->bgkf", scores, msg)
        idx = np.arange(K)
        own = ad.reshape(scores[:, idx, idx, :], (scores.shape[0], 1, K, scores.shape[3]))
        other_ues = (total - own * msg) * (1.0 / K)
    pre = ad.linear(Dp, Q) + from_aps + ad.linear(other_ps, U2) + other_ues
    if norm is not None:
        pre = norm(pre)
    return ACTIVATIONS[activation](pre)


def sig_inf_update(inf, sig, graph: PowerGraph, W: dict, activation="relu", norms=None,
                   update_inf: bool = True):
    """One power-GNN layer.

    ``inf`` (B, M, K, K, F) holds INF-edge representations (zero elsewhere)
    and ``sig`` (B, M, K, F) the SIG edge of each AN. A SIG edge (m, k, k)
    aggregates the INF edges at its AN (mean 1/K), the INF edges at its UE
    (weight 1/(M|A_j|) per AP j) and the other SIG edges at its UE
    (1/|S_k|). An INF edge (m, i, k) aggregates the other INF edges at its AN
    and UE, the SIG edge of its AN and the SIG edges at its UE.
    Returns the new ``(inf, sig)``; with ``update_inf=False`` only SIG edges
    are updated and the INF output is ``None``.
    """
    inf, sig = ad.as_tensor(inf), ad.as_tensor(sig)
    B, M, K, _, F = inf.shape
    A = graph.A
    inf_m = graph.inf_mask[..., None]
    n_served = A.sum(axis=2)  # |A_m|
    w_ap = np.divide(1.0, M * n_served, out=np.zeros_like(n_served), where=n_served > 0)
    w_ap = w_ap[:, :, None, None, None]
    n_serving = A.sum(axis=1)  # |S_k|
    inv_s = (1.0 / n_serving)[:, None, :, None]

    rowsum = inf.sum(axis=3)  # (B, M, K, F): INF edges at AN_{m_i}
    colsum = (inf * w_ap).sum(axis=(1, 2))  # (B, K, F): INF edges at UE_k
    colsum = ad.reshape(colsum, (B, 1, K, F))
    sigsum = sig.sum(axis=1, keepdims=True)  # (B, 1, K, F)
    sig_at_ue = sigsum * inv_s

    def lin(x, name):
        return ad.linear(x, W[name], blas=True)

    sig_pre = (lin(sig, "Q_AN_1") + lin(rowsum * (1.0 / K), "U_AN_1") + lin(colsum, "U_AN_2")
               + lin((sigsum - sig) * inv_s, "U_AN_3"))

    a_mask = A[..., None]
    act = ACTIVATIONS[activation]
    if not update_inf:
        if norms is not None:
            sig_pre = norms[0](sig_pre, mask=a_mask)
        return None, act(sig_pre) * a_mask

    # (Q - U1/K) d - w_m U2 d + [U1 rowsum/K + U3 sig] + [U2 colsum + U4 sig_at_ue]
    own = ad.linear(inf, W["Q_INF_1"] - W["U_INF_1"] * (1.0 / K), blas=True)
    own = own - lin(inf, "U_INF_2") * w_ap
    Fo = own.shape[4]
    row = lin(rowsum * (1.0 / K), "U_INF_1") + lin(sig, "U_INF_3")
    col = lin(colsum, "U_INF_2") + lin(sig_at_ue, "U_INF_4")
    inf_pre = own + ad.reshape(row, (B, M, K, 1, Fo)) + ad.reshape(col, (B, 1, 1, K, Fo))

    if norms is not None:
        sig_pre = norms[0](sig_pre, mask=a_mask)
        inf_pre = norms[1](inf_pre, mask=inf_m)
    return act(inf_pre) * inf_m, act(sig_pre) * a_mask


def split_power_features(features, graph: PowerGraph):
    """(INF, SIG) parts of dense (B, M, K, K, F) edge features."""
    feats = ad.as_tensor(features)
    eye = np.eye(graph.A.shape[-1])[None, None, :, :, None]
    sig = (feats * eye).sum(axis=3) * graph.A[..., None]
    return feats * graph.inf_mask[..., None], sig


# ---------------------------------------------------------------------------
# models


class _NormAdapter:
    def __init__(self, bn, training):
        self.bn, self.training = bn, training

    def __call__(self, x, mask=None):
        return self.bn(x, self.training, mask=mask)


class EdgeGNN:
    """Shared parameter bookkeeping and checkpoint I/O."""

    variant = ""
    weight_names: tuple = ()
    edge_types: tuple = ()

    def __init__(self, widths, in_widths: dict, seed=0, **options):
        self.widths = list(widths)
        self.in_widths = dict(in_widths)
        self.options = options
        rng = np.random.default_rng(seed)
        self.layers = []
        self.norms = []
        prev = dict(in_widths)
        for l, width in enumerate(self.widths):
            weights = {name: ad.glorot(rng, width, prev[self._input_type(name)])
                       for name in self._layer_weights()}
            self.layers.append(weights)
            last = l == len(self.widths) - 1
            self.norms.append(None if last else {t: ad.BatchNorm(width) for t in self.edge_types})
            prev = {t: width for t in self.edge_types}
        self.head = self._make_head(rng)

    def _layer_weights(self):
        return self.weight_names

    def _input_type(self, name: str) -> str:
        raise NotImplementedError

    def _make_head(self, rng):
        return {}

    def parameters(self) -> dict:
        params = {}
        for l, (weights, norms) in enumerate(zip(self.layers, self.norms), start=1):
            for name, p in weights.items():
                params[f"{l}/{name}"] = p
            for t, bn in (norms or {}).items():
                params[f"{l}/BN_{t}_gamma"] = bn.gamma
                params[f"{l}/BN_{t}_beta"] = bn.beta
        for name, p in self.head.items():
            params[f"out/{name}"] = p
        return params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def _norm(self, l: int, t: str, training: bool):
        norms = self.norms[l]
        return None if norms is None else _NormAdapter(norms[t], training)

    def to_checkpoint(self) -> dict:
        records = []
        for l, (weights, norms) in enumerate(zip(self.layers, self.norms), start=1):
            for name, p in weights.items():
                records.append(checkpoint.encode(l, name, p.data))
            for t, bn in (norms or {}).items():
                records.append(checkpoint.encode(l, f"BN_{t}_gamma", bn.gamma.data))
                records.append(checkpoint.encode(l, f"BN_{t}_beta", bn.beta.data))
                records.append(checkpoint.encode(l, f"BN_{t}_mean", bn.running_mean))
                records.append(checkpoint.encode(l, f"BN_{t}_var", bn.running_var))
        for name, p in self.head.items():
            records.append(checkpoint.encode("out", name, p.data))
        return {"variant": self.variant, "widths": self.widths, "options": self.options,
                "params": records}

    def load_records(self, records) -> None:
        for rec in records:
            array = checkpoint.decode(rec)
            name = rec["name"]
            if rec["layer"] == "out":
                target = self.head[name]
                if target.shape != array.shape:
                    raise ValueError(f"shape mismatch for out/{name}")
                target.data = array
                continue
            l = int(rec["layer"]) - 1
            if name.startswith("BN_"):
                _, t, field = name.split("_", 2)
                bn = self.norms[l][t]
                if field == "gamma":
                    bn.gamma.data = array
                elif field == "beta":
                    bn.beta.data = array
                elif field == "mean":
                    bn.running_mean = array
                else:
                    bn.running_var = array
            else:
                target = self.layers[l][name]
                if target.shape != array.shape:
                    raise ValueError(f"shape mismatch for layer {l + 1} {name}")
                target.data = array


class PilotGNN(EdgeGNN):
    """DTS-Pilot-GNN (``variant='dts_pilot'``) or STS-GNN (``variant='sts'``)."""

    edge_types = ("AP", "PS")

    def __init__(self, widths=None, variant: str = "dts_pilot", attention: bool = True,
                 seed=0, attention_activation: str = "tanh"):
        if variant not in ("dts_pilot", "sts"):
            raise ValueError(f"unknown pilot GNN variant {variant!r}")
        self.variant = variant
        self.attention = attention
        self.attention_activation = attention_activation
        widths = DEFAULT_WIDTHS[variant] if widths is None else widths
        if variant == "sts" and widths[-1] < 2:
            raise ValueError("the joint model needs a final width of at least 2")
        super().__init__(widths, {"AP": 2, "PS": 1}, seed, attention=attention,
                         attention_activation=attention_activation)

    def _layer_weights(self):
        names = ["Q_AP_1", "U_AP_1", "U_AP_2", "Q_PS_1", "U_PS_1", "U_PS_2", "U_PS_3"]
        if self.attention:
            names += ["U_PS_4", "U_PS_5"]
        return names

    def _input_type(self, name: str) -> str:
        if name in ("Q_PS_1", "U_PS_2", "U_PS_3"):
            return "PS"
        return "AP"

    def forward(self, graph: PilotGraph, training: bool = False):
        """Final ``(AP-UE, PS-UE)`` representations."""
        Da = ad.as_tensor(graph.ap_ue)
        Dp = ad.as_tensor(graph.ps_ue)
        n = len(self.layers)
        for l, W in enumerate(self.layers):
            act = "identity" if l == n - 1 else "relu"
            scores = None
            if self.attention:
                scores = attention_score(Da, W["U_PS_4"], W["U_PS_5"], self.attention_activation)
            Dp_new = ps_ue_update(Dp, Da, W["Q_PS_1"], W["U_PS_1"], W["U_PS_2"], W["U_PS_3"],
                                  scores, act, self._norm(l, "PS", training))
            Da = ap_ue_update(Da, W["Q_AP_1"], W["U_AP_1"], W["U_AP_2"], act,
                              self._norm(l, "AP", training))
            Dp = Dp_new
        return Da, Dp

    def __call__(self, graph: PilotGraph, training: bool = False):
        """Soft assignment (B, G, K); the joint variant also returns powers (B, M, K)."""
        Da, Dp = self.forward(graph, training)
        X = pilot_output(Dp[..., 0])
        if self.variant == "dts_pilot":
            return X
        P = power_output(Da[..., 1], graph.A, graph.P_max)
        return X, P


class PowerGNN(EdgeGNN):
    """DTS-Power-GNN over SIG/INF edges; the final SIG representation is
    projected to a scalar score by a learned row before the power output."""

    variant = "dts_power"
    edge_types = ("SIG", "INF")
    weight_names = ("Q_AN_1", "U_AN_1", "U_AN_2", "U_AN_3",
                    "Q_INF_1", "U_INF_1", "U_INF_2", "U_INF_3", "U_INF_4")

    def __init__(self, widths=None, seed=0):
        widths = DEFAULT_WIDTHS["dts_power"] if widths is None else widths
        super().__init__(widths, {"SIG": 2, "INF": 2}, seed)

    def _input_type(self, name: str) -> str:
        return "SIG"

    def _make_head(self, rng):
        return {"u_out": ad.glorot(rng, 1, self.widths[-1])}

    def __call__(self, graph: PowerGraph, training: bool = False):
        inf, sig = split_power_features(graph.features, graph)
        n = len(self.layers)
        for l, W in enumerate(self.layers):
            last = l == n - 1
            norms = None
            if not last:
                norms = (self._norm(l, "SIG", training), self._norm(l, "INF", training))
            inf, sig = sig_inf_update(inf, sig, graph, W, "identity" if last else "relu", norms,
                                      update_inf=not last)
        scores = ad.linear(sig, self.head["u_out"], blas=True)[..., 0]
        return power_output(scores, graph.A, graph.P_max)


def model_from_checkpoint(payload: dict) -> EdgeGNN:
    variant = payload["variant"]
    opts = payload.get("options", {})
    if variant == "dts_power":
        model = PowerGNN(payload["widths"])
    else:
        model = PilotGNN(payload["widths"], variant, attention=opts.get("attention", True),
                         attention_activation=opts.get("attention_activation", "tanh"))
    model.load_records(payload["params"])
    return model


def save_models(path, models: dict, meta: dict | None = None) -> None:
    """Write one or more models (by role) plus metadata to a checkpoint file."""
    payload = {"format": "cellfree-gnn", "version": 1, "meta": meta or {},
               "models": {role: m.to_checkpoint() for role, m in models.items()}}
    checkpoint.save(path, payload)


def load_models(path) -> tuple[dict, dict]:
    payload = checkpoint.load(path)
    models = {role: model_from_checkpoint(p) for role, p in payload["models"].items()}
    return models, payload.get("meta", {})
