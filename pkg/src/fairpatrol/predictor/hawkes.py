"""Windowed exponential excitation over hourly count histories.

For a (N, T) count history ``y`` and an (N, N) excitation matrix ``alpha``::

    z_v(t) = sum_u alpha[u, v] * y_u(t)
    A_v(t) = sum_{k=0}^{H-1} exp(-beta * k) * z_v(t - 1 - k)

with ``y`` zero before ``t = 0``. ``A`` at ``t`` only sees counts up to
``t - 1``.
"""

from __future__ import annotations

import numpy as np
import torch

HISTORY = 168


def mixed_counts(y, alpha) -> np.ndarray:
    return np.asarray(alpha, dtype=np.float64).T @ np.asarray(y, dtype=np.float64)


def excitation_windowed(y, alpha, beta: float, H: int = HISTORY) -> np.ndarray:
    """Direct evaluation of the windowed sum. O(N T H); the reference."""
    z = mixed_counts(y, alpha)
    N, T = z.shape
    out = np.zeros((N, T))
    w = np.exp(-beta * np.arange(H))
    for t in range(T):
        for k in range(H):
            s = t - 1 - k
            if s < 0:
                break
            out[:, t] += w[k] * z[:, s]
    return out


def excitation_recursive(y, alpha, beta: float, H: int = HISTORY) -> np.ndarray:
    """O(N T) rolling form with a tail correction for the finite window.

    ``A(t) = e^{-beta} A(t-1) + z(t-1) - e^{-beta H} z(t-1-H)``. A window
    holding only zeros resets the state to an exact 0 so cancellation noise
    never outlives its events.
    """
    z = mixed_counts(y, alpha)
    N, T = z.shape
    out = np.zeros((N, T))
    decay = np.exp(-beta)
    tail = np.exp(-beta * H)
    state = np.zeros(N)
    live = np.zeros(N, dtype=np.int64)  # nonzero z entries inside the window
    for t in range(1, T):
        state = decay * state + z[:, t - 1]
        live += z[:, t - 1] != 0
        old = t - 1 - H
        if old >= 0:
            state -= tail * z[:, old]
            live -= z[:, old] != 0
        state[live == 0] = 0.0
        out[:, t] = state
    return out


def excitation_torch(y_seg: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor, H: int, W: int) -> torch.Tensor:
    """Differentiable windowed sum for a batch of segments.

    ``y_seg`` is (B, N, H + W - 1) covering times ``[s - H, s + W - 1)`` of a
    window starting at ``s``; the result is (B, N, W) for times ``s..s+W-1``.
    """
    B, N, L = y_seg.shape
    if L != H + W - 1:
        raise ValueError(f"segment length {L} != H + W - 1 = {H + W - 1}")
    z = torch.einsum("uv,but->bvt", alpha, y_seg)
    # Banded Toeplitz map: segment index i feeds output t with lag H-1-(i-t).
    i = torch.arange(L).unsqueeze(1)
    t = torch.arange(W).unsqueeze(0)
    off = i - t
    band = (off >= 0) & (off < H)
    lag = (H - 1 - off).clamp(0, H - 1).to(y_seg.dtype)
    toeplitz = torch.where(band, torch.exp(-beta * lag), torch.zeros((), dtype=y_seg.dtype))
    return z @ toeplitz


def history_segments(y: np.ndarray, starts, W: int, H: int) -> np.ndarray:
    """Stack ``y[:, s-H : s+W-1]`` for every start, zero-padding before 0."""
    N, T = y.shape
    padded = np.concatenate([np.zeros((N, H)), np.asarray(y, dtype=np.float64)], axis=1)
    return np.stack([padded[:, s : s + H + W - 1] for s in starts])
