"""Inverse-count estimates under linear features.

Each action keeps ``Sigma_a = (Phi_a^T Phi_a + I / prior)^{-1}``, the inverse of
the regularised Gram matrix of the features seen with that action, updated one
sample at a time with the Sherman-Morrison formula.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

RESYMMETRIZE_EVERY = 1000
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class FeatureMap:
    dim: int
    fn: Callable[[int], np.ndarray]

    def __call__(self, s) -> np.ndarray:
        return self.fn(s)


def one_hot(dim: int) -> FeatureMap:
    eye = np.eye(dim)
    eye.setflags(write=False)
    return FeatureMap(dim, lambda s: eye[s])


def layered_one_hot(layer_sizes) -> FeatureMap:
    """One-hot features over all ``(h, s)`` of a layered MDP; call with ``(h, s)``."""
    offsets = np.concatenate([[0], np.cumsum(layer_sizes)]).astype(int)
    eye = np.eye(int(offsets[-1]))
    eye.setflags(write=False)
    return FeatureMap(int(offsets[-1]), lambda hs: eye[offsets[hs[0]] + hs[1]])


class PrecisionState:
    """Per-action ``D x D`` matrices initialised to ``prior * I``."""

    def __init__(self, dim: int, n_actions: int, prior: float = 1.0):
        if prior <= 0:
            raise ValueError("prior scale must be positive")
        self.dim = int(dim)
        self.n_actions = int(n_actions)
        self.prior = float(prior)
        self.sigma = np.stack([np.eye(self.dim) * self.prior for _ in range(self.n_actions)])
        self.updates = 0

    def _check(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise ValueError(f"feature vector has shape {phi.shape}, expected ({self.dim},)")
        return phi

    def inverse_count(self, a: int, phi) -> float:
        phi = self._check(phi)
        return float(max(phi @ self.sigma[a] @ phi, 0.0))

    def update(self, a: int, phi) -> None:
        """Rank-one Sherman-Morrison downdate of ``Sigma_a`` with sample ``phi``."""
        phi = self._check(phi)
        S = self.sigma[a]
        v = S @ phi
        S -= np.outer(v, v) / (1.0 + phi @ v)
        self.updates += 1
        if self.updates % RESYMMETRIZE_EVERY == 0 or np.max(np.abs(S - S.T)) > SYMMETRY_TOL:
            S[...] = 0.5 * (S + S.T)

    def save(self, path) -> None:
        """Write a JSON header line followed by the row-major float64 matrices."""
        header = {"dim": self.dim, "actions": self.n_actions, "prior": self.prior,
                  "updates": self.updates, "dtype": "<f8", "order": "C"}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.sigma, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PrecisionState":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            data = np.frombuffer(fh.read(), dtype=header["dtype"])
        state = cls(header["dim"], header["actions"], header["prior"])
        state.sigma = data.reshape(state.n_actions, state.dim, state.dim).astype(float)
        state.updates = header["updates"]
        return state


def inverse_count(state: PrecisionState, a: int, phi) -> float:
    return state.inverse_count(a, phi)


def update_precision(state: PrecisionState, a: int, phi) -> PrecisionState:
    state.update(a, phi)
    return state


def local_uncertainty_linear(beta: float, inv_count: float) -> float:
    if beta <= 0 or inv_count < 0:
        raise ValueError("need beta > 0 and a nonnegative inverse count")
    return beta ** 2 * inv_count
