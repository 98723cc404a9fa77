"""Pilot assignment matrices and permutation machinery.

A pilot assignment is a ``(G, K)`` matrix ``X`` whose column ``k`` holds the
(possibly soft) assignment of UE ``k`` over ``G`` candidate pilot sequences.
Permutations are index arrays ``p`` with ``new[i] = old[p[i]]``; the matching
permutation matrix has ``Pi[p[i], i] = 1`` so that ``Pi.T @ X == X[p]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


def psi(X) -> float:
    """Number of assigned pilot sequences, ``sum_g (1 - prod_k (1 - x_gk))``.

    Smooth in the entries, and an integer count of nonzero rows for binary X.
    """
    X = np.asarray(X, dtype=float)
    return float(np.sum(1.0 - np.prod(1.0 - X, axis=1)))


def gram(X) -> np.ndarray:
    """Pilot overlap ``x_k^T x_i`` for every UE pair, (K, K)."""
    X = np.asarray(X, dtype=float)
    return X.T @ X


def check_assignment(X, binary: bool = True, atol: float = 1e-12) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("pilot assignment must be a matrix")
    if np.any(X < -atol) or np.any(X > 1 + atol):
        raise ValueError("entries must lie in [0, 1]")
    if binary and not np.all((X == 0) | (X == 1)):
        raise ValueError("binary assignment expected")
    if not np.allclose(X.sum(axis=0), 1.0, atol=atol, rtol=0):
        raise ValueError("every UE must be assigned exactly one pilot sequence")
    return X


@dataclass(frozen=True)
class CompactAssignment:
    tau_p: int
    X_o: np.ndarray

    def to_json(self) -> dict:
        return {"tau_p": int(self.tau_p), "X_o": self.X_o.astype(int).tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "CompactAssignment":
        X_o = np.asarray(d["X_o"], dtype=float)
        if X_o.shape[0] != d["tau_p"]:
            raise ValueError("tau_p does not match the number of rows of X_o")
        return cls(int(d["tau_p"]), X_o)


def compact(X) -> CompactAssignment:
    """Drop the unused pilot sequences (all-zero rows), keeping row order."""
    X = check_assignment(X)
    used = X.any(axis=1)
    return CompactAssignment(int(used.sum()), X[used].copy())


def expand(ca: CompactAssignment, K: int | None = None) -> np.ndarray:
    """Pad a compact assignment with zero rows back to ``K`` candidates."""
    K = ca.X_o.shape[1] if K is None else K
    if ca.tau_p > K:
        raise ValueError("more pilot sequences than candidates")
    X = np.zeros((K, ca.X_o.shape[1]))
    X[: ca.tau_p] = ca.X_o
    return X


def discretize(X_soft) -> np.ndarray:
    """Column-wise argmax one-hot; ties go to the lowest pilot index."""
    X_soft = np.asarray(X_soft, dtype=float)
    out = np.zeros_like(X_soft)
    out[np.argmax(X_soft, axis=0), np.arange(X_soft.shape[1])] = 1.0
    return out


def labels_to_matrix(labels, n_ps: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    n_ps = len(labels) if n_ps is None else n_ps
    X = np.zeros((n_ps, len(labels)))
    X[labels, np.arange(len(labels))] = 1.0
    return X


def matrix_to_labels(X) -> np.ndarray:
    return np.argmax(np.asarray(X), axis=0)


def canonical_labels(labels) -> tuple:
    """Relabel pilot indices by first occurrence (partition canonical form)."""
    mapping: dict[int, int] = {}
    return tuple(mapping.setdefault(int(g), len(mapping)) for g in labels)


def assignment_to_json(X) -> dict:
    X = np.asarray(X)
    return {"K": int(X.shape[1]), "X": X.tolist()}


def assignment_from_json(d: dict) -> np.ndarray:
    X = np.asarray(d["X"], dtype=float)
    if X.shape[1] != d["K"]:
        raise ValueError("K does not match the number of columns of X")
    return X


def dumps_assignment(X) -> str:
    return json.dumps(assignment_to_json(X))


# ---------------------------------------------------------------------------
# permutations


def permutation_matrix(p) -> np.ndarray:
    p = np.asarray(p)
    Pi = np.zeros((len(p), len(p)))
    Pi[p, np.arange(len(p))] = 1.0
    return Pi


def is_permutation(p) -> bool:
    p = np.asarray(p)
    return p.ndim == 1 and np.array_equal(np.sort(p), np.arange(len(p)))


@dataclass(frozen=True)
class PermutationSpec:
    pi_ue: np.ndarray
    pi_ap: np.ndarray
    pi_ps: np.ndarray

    def __post_init__(self):
        for name in ("pi_ue", "pi_ap", "pi_ps"):
            if not is_permutation(getattr(self, name)):
                raise ValueError(f"{name} is not a permutation")

    @classmethod
    def identity(cls, M: int, K: int, G: int | None = None) -> "PermutationSpec":
        return cls(np.arange(K), np.arange(M), np.arange(K if G is None else G))

    @classmethod
    def random(cls, rng: np.random.Generator, M: int, K: int, G: int | None = None) -> "PermutationSpec":
        return cls(rng.permutation(K), rng.permutation(M), rng.permutation(K if G is None else G))

    def omega_an(self) -> np.ndarray:
        """``(I_M kron Pi_UE)(Pi_AP kron I_K)``, acting on row-vectorized (M, K) data."""
        M, K = len(self.pi_ap), len(self.pi_ue)
        return np.kron(np.eye(M), permutation_matrix(self.pi_ue)) @ np.kron(
            permutation_matrix(self.pi_ap), np.eye(K))

    def _check(self, M: int | None = None, K: int | None = None, G: int | None = None):
        if M is not None and M != len(self.pi_ap):
            raise ValueError(f"AP dimension {M} does not match permutation of size {len(self.pi_ap)}")
        if K is not None and K != len(self.pi_ue):
            raise ValueError(f"UE dimension {K} does not match permutation of size {len(self.pi_ue)}")
        if G is not None and G != len(self.pi_ps):
            raise ValueError(f"PS dimension {G} does not match permutation of size {len(self.pi_ps)}")

    def ap_ue(self, Z):
        """``Pi_AP^T Z Pi_UE`` for (M, K) data such as beta, A or P."""
        Z = np.asarray(Z)
        self._check(M=Z.shape[0], K=Z.shape[1])
        return Z[np.ix_(self.pi_ap, self.pi_ue)]

    def ps_ue(self, X):
        """``Pi_PS^T X Pi_UE`` for pilot assignments."""
        X = np.asarray(X)
        self._check(G=X.shape[0], K=X.shape[1])
        return X[np.ix_(self.pi_ps, self.pi_ue)]

    def ps(self, X):
        """``Pi_PS^T X``: relabel pilot sequences only."""
        X = np.asarray(X)
        self._check(G=X.shape[0])
        return X[self.pi_ps]

    def equivalent(self, G):
        """``Pi_UE^T G Omega_AN`` on (M, K, K) equivalent channels ``[m, i, k]``."""
        G = np.asarray(G)
        self._check(M=G.shape[0], K=G.shape[1])
        return G[np.ix_(self.pi_ap, self.pi_ue, self.pi_ue)]

    def power_vec(self, p_vec):
        """``vec(P) Omega_AN`` for the row-vectorized power matrix."""
        return np.asarray(p_vec) @ self.omega_an()

    def inverse(self) -> "PermutationSpec":
        return PermutationSpec(np.argsort(self.pi_ue), np.argsort(self.pi_ap), np.argsort(self.pi_ps))
