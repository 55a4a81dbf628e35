"""Multilayer non-negative matrix factorization with max-pooling.

Layer 1 factorizes the chunk-amplitude matrix O ~ H1 W1; each deeper
layer factorizes the max-pooled weight matrix of the one above. The
effective deep weight matrix WX = H2 ... HK WK assigns every basis
column of H1 a share of the total reconstructed mass; a column whose
share exceeds the direct-share threshold is treated as direct sound,
the rest as the reverberant component.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter1d

from .audio_io import TraceMatrix
from .errors import DomainError

_DIV_EPS = 1e-9


@dataclass
class NmfLayer:
    H: np.ndarray            # basis, columns sum to 1 (zero columns stay zero)
    W: np.ndarray            # weights, carry the mass
    r: int
    residual: float          # final Frobenius error ||O - HW||
    objective_history: list = field(default_factory=list)


@dataclass
class DecompositionResult:
    layers: list
    WX: np.ndarray           # effective deep weight matrix, r1 x t
    direct_mask: np.ndarray  # bool per column of H1
    reverberant: np.ndarray  # O' = H1[:, ~mask] WX[~mask]  (direct cols zeroed)
    direct: np.ndarray       # complementary regeneration

    @property
    def total(self) -> np.ndarray:
        return self.reverberant + self.direct


def nmf_layer(O: np.ndarray, r: int, tol: float = 0.05, max_iter: int = 500,
              seed: int = 0, validate: bool = False) -> NmfLayer:
    """One NMF layer via Lee-Seung multiplicative updates (Frobenius).

    Stops when the relative objective change drops below tol or after
    max_iter iterations. Deterministic for a fixed seed. H is column-sum
    normalized on return (scale folded into W) so downstream weight
    shares are meaningful.
    """
    O = np.asarray(O, dtype=np.float64)
    if O.ndim != 2:
        raise DomainError("NMF input must be a matrix")
    if np.any(O < 0):
        raise DomainError("NMF input must be non-negative")
    m, n = O.shape
    if not (1 <= r <= min(m, n)):
        raise DomainError(f"rank {r} outside [1, {min(m, n)}]")

    if not np.any(O):
        return NmfLayer(np.zeros((m, r)), np.zeros((r, n)), r, 0.0, [0.0])

    rng = np.random.Generator(np.random.PCG64(seed))
    # entries in (0, 1]
    H = 1.0 - rng.random((m, r))
    W = 1.0 - rng.random((r, n))

    history = []
    prev = np.linalg.norm(O - H @ W)
    history.append(prev)
    for _ in range(max_iter):
        H *= (O @ W.T) / (H @ W @ W.T + _DIV_EPS)
        W *= (H.T @ O) / (H.T @ H @ W + _DIV_EPS)
        if validate:
            assert np.all(H >= 0) and np.all(W >= 0)
        err = np.linalg.norm(O - H @ W)
        history.append(err)
        if abs(prev - err) < tol * max(prev, _DIV_EPS):
            break
        prev = err

    col = H.sum(axis=0)
    scale = np.where(col > 0, col, 1.0)
    H = H / scale
    W = W * scale[:, None]
    return NmfLayer(H, W, r, history[-1], history)


def max_pool(W: np.ndarray, c: int) -> np.ndarray:
    """Moving-window row maximum over columns [j-c, j+c], clamped at the
    matrix edges. c=0 returns W unchanged."""
    if c < 0:
        raise DomainError("pooling half-window must be >= 0")
    W = np.asarray(W, dtype=np.float64)
    if c == 0:
        return W.copy()
    return maximum_filter1d(W, size=2 * c + 1, axis=-1, mode="nearest")


def deep_decompose(O, K: int = 3, ranks=(100, 50, 25), c: int = 20,
                   tol: float = 0.05, max_iter: int = 500, seed: int = 0,
                   direct_share_threshold: float = 0.9,
                   debug_dir=None) -> DecompositionResult:
    """Run K nested NMF layers and partition H1 columns into direct and
    reverberant sound.

    The pooled weight matrix feeds the next layer; the raw weights feed
    the regeneration. Requested ranks are clamped to the input
    dimensions of each layer.
    """
    values = O.values if isinstance(O, TraceMatrix) else np.asarray(O, dtype=np.float64)
    if K < 1:
        raise DomainError("layer count K must be >= 1")
    if len(ranks) < K:
        raise DomainError("need one rank per layer")

    seeds = np.random.SeedSequence(seed).spawn(K)
    layers = []
    current = values
    for k in range(K):
        r = max(1, min(int(ranks[k]), min(current.shape)))
        layer = nmf_layer(current, r, tol=tol, max_iter=max_iter,
                          seed=seeds[k].generate_state(1)[0])
        layers.append(layer)
        if k + 1 < K:
            current = max_pool(layer.W, c)

    WX = layers[-1].W
    for layer in reversed(layers[1:]):
        WX = layer.H @ WX

    total_mass = WX.sum()
    shares = WX.sum(axis=1) / total_mass if total_mass > 0 else np.zeros(WX.shape[0])
    direct_mask = shares > direct_share_threshold

    H1 = layers[0].H
    H_rev = H1.copy()
    H_rev[:, direct_mask] = 0.0
    H_dir = H1 - H_rev
    reverberant = H_rev @ WX
    direct = H_dir @ WX

    if debug_dir is not None:
        debug_dir = Path(debug_dir)
        debug_dir.mkdir(parents=True, exist_ok=True)
        for k, layer in enumerate(layers, start=1):
            np.savetxt(debug_dir / f"layer{k}_H.csv", layer.H, delimiter=",")
            np.savetxt(debug_dir / f"layer{k}_W.csv", layer.W, delimiter=",")
        np.savetxt(debug_dir / "WX.csv", WX, delimiter=",")

    return DecompositionResult(layers, WX, direct_mask, reverberant, direct)
