"""Small dense real matrices: norms, spectral radius, Gershgorin bounds and
Jordan-form balancing.

Matrices are plain ``numpy.ndarray`` objects of shape ``(d, d)``; use
:func:`as_matrix` to validate arbitrary input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError, ValidationError

POWER_RTOL = 1e-12
POWER_MAXITER = 10_000
GELFAND_RTOL = 1e-10
GELFAND_MAX_SQUARINGS = 64
GELFAND_MIN_SQUARINGS = 40
PRECONDITION_SQUARINGS = 64
BALANCE_MAX_T = 2.0**60


def as_matrix(m) -> np.ndarray:
    """Return ``m`` as a finite, square float64 array (copy-free when possible)."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValidationError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix entries must be finite")
    return a


def matrix_to_dict(m) -> dict:
    a = as_matrix(m)
    return {"dim": int(a.shape[0]), "rows": a.tolist()}


def matrix_from_dict(obj: dict) -> np.ndarray:
    try:
        dim = int(obj["dim"])
        rows = obj["rows"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"matrix JSON needs 'dim' and 'rows': {exc}") from None
    a = as_matrix(rows)
    if a.shape[0] != dim:
        raise ValidationError(f"matrix declares dim={dim} but has {a.shape[0]} rows")
    return a


def _norm_2x2(a, b, c, d):
    # sigma_max of [[a, b], [c, d]]; works elementwise on arrays
    return 0.5 * (np.hypot(a + d, c - b) + np.hypot(a - d, b + c))


def operator_norm(m) -> float:
    """Largest singular value of ``m``.

    Closed form for ``d <= 2``; power iteration on ``m.T @ m`` otherwise,
    started from a column of a high power of ``m.T @ m``.
    """
    a = as_matrix(m)
    d = a.shape[0]
    if d == 1:
        return abs(float(a[0, 0]))
    if d == 2:
        return float(_norm_2x2(a[0, 0], a[0, 1], a[1, 0], a[1, 1]))

    gram = a.T @ a
    fro = np.linalg.norm(gram)
    if fro == 0.0:
        return 0.0
    # normalised squarings of the Gram matrix approach the projector onto its
    # top eigenspace, so a near-tie between the two largest singular values no
    # longer slows the iteration below
    p = gram / fro
    for _ in range(PRECONDITION_SQUARINGS):
        q = p @ p
        q /= np.linalg.norm(q)
        done = np.linalg.norm(q - p) <= POWER_RTOL
        p = q
        if done:
            break
    cols = np.linalg.norm(p, axis=0)
    j = int(np.argmax(cols))
    v = p[:, j] / cols[j]
    lam = float(v @ gram @ v)
    for _ in range(POWER_MAXITER):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = float(v @ gram @ v)
        if abs(new - lam) <= POWER_RTOL * abs(new):
            return math.sqrt(max(new, 0.0))
        lam = new
    raise NonConvergenceError(
        f"power iteration did not converge in {POWER_MAXITER} iterations", last_iterate=v
    )


def batch_operator_norm(ms: np.ndarray) -> np.ndarray:
    """Operator norms of a stack of matrices with shape ``(n, d, d)``."""
    ms = np.asarray(ms, dtype=np.float64)
    d = ms.shape[-1]
    if d == 1:
        return np.abs(ms[:, 0, 0])
    if d == 2:
        return _norm_2x2(ms[:, 0, 0], ms[:, 0, 1], ms[:, 1, 0], ms[:, 1, 1])
    return np.linalg.norm(ms, ord=2, axis=(1, 2))


def spectral_radius(m) -> float:
    """Spectral radius from Gelfand's formula ``lim ||A^(2^k)||^(1/2^k)``.

    Each squaring is renormalised and the scale is tracked in log space, so
    matrices with radius far from 1 neither overflow nor underflow.
    """
    a = as_matrix(m)
    n0 = operator_norm(a)
    if n0 == 0.0:
        return 0.0
    b = a / n0
    log_scale = math.log(n0)  # log of the factor removed from A^(2^k)
    est = n0
    for k in range(1, GELFAND_MAX_SQUARINGS + 1):
        b = b @ b
        nb = operator_norm(b)
        if nb == 0.0:
            return 0.0  # nilpotent
        b /= nb
        log_scale = 2.0 * log_scale + math.log(nb)
        new = math.exp(log_scale / 2.0**k)
        # consecutive estimates of an oscillating complex pair can agree by
        # accident, so never stop before the error bound log(cond) / 2^k is tiny
        if k >= GELFAND_MIN_SQUARINGS and abs(new - est) < GELFAND_RTOL * new:
            return new
        est = new
    raise NonConvergenceError(
        f"Gelfand squaring did not converge in {GELFAND_MAX_SQUARINGS} squarings",
        last_iterate=est,
    )


def gershgorin_upper_bound(m) -> float:
    """``max_i (|m_ii| + sum_{j != i} |m_ij|)``, i.e. the largest absolute row sum."""
    a = as_matrix(m)
    return float(np.max(np.sum(np.abs(a), axis=1)))


@dataclass(frozen=True, eq=False)
class JordanLikeDecomposition:
    """Split ``A = block_diag + upper`` of an already block-normal matrix."""

    block_diag: np.ndarray
    upper: np.ndarray
    block_sizes: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.block_diag.shape[0]

    def block_index(self) -> np.ndarray:
        """Block number (1-based) of every coordinate."""
        return np.repeat(np.arange(1, len(self.block_sizes) + 1), self.block_sizes)

    def matrix(self) -> np.ndarray:
        return self.block_diag + self.upper


def decompose_jordan_like(m) -> JordanLikeDecomposition:
    """Validate that ``m`` is in real block-Jordan layout and split it.

    A 2x2 block ``[[a, -b], [b, a]]`` with ``b != 0`` is recognised wherever a
    nonzero subdiagonal entry appears; everything else on the diagonal is a
    1x1 block. This does not compute a Jordan form.
    """
    a = as_matrix(m)
    d = a.shape[0]
    sizes = []
    i = 0
    while i < d:
        if i + 1 < d and a[i + 1, i] != 0.0:
            p, q, r, s = a[i, i], a[i, i + 1], a[i + 1, i], a[i + 1, i + 1]
            if p != s or q != -r:
                raise ValidationError(
                    f"entries ({i},{i})..({i + 1},{i + 1}) are not a rotation-scaling block "
                    f"[[a, -b], [b, a]]: got [[{p}, {q}], [{r}, {s}]]"
                )
            sizes.append(2)
            i += 2
        else:
            sizes.append(1)
            i += 1

    idx = np.repeat(np.arange(len(sizes)), sizes)
    same_block = idx[:, None] == idx[None, :]
    below = idx[:, None] > idx[None, :]
    bad = np.argwhere(below & (a != 0.0))
    if bad.size:
        r, c = bad[0]
        raise ValidationError(f"entry ({r},{c}) = {a[r, c]} lies below the block diagonal")

    block_diag = np.where(same_block, a, 0.0)
    upper = np.where(idx[:, None] < idx[None, :], a, 0.0)
    return JordanLikeDecomposition(block_diag, upper, tuple(sizes))


def balance(dec: JordanLikeDecomposition, kappa: float) -> tuple[float, np.ndarray]:
    """Shrink the nilpotent part below ``kappa`` by a block-diagonal similarity.

    With ``D_t = diag(t I_1, t^2 I_2, ...)`` the entry of ``U`` linking block
    ``i`` to block ``j > i`` scales by ``t^(i-j)``. Returns the first ``t`` in
    2, 4, 8, ... that gives ``||D_t U D_t^-1|| < kappa`` and the balanced
    ``D_t (A0 + U) D_t^-1``.
    """
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    k = dec.block_index().astype(np.float64)
    expo = np.minimum(k[:, None] - k[None, :], 0.0)  # <= -1 wherever upper is nonzero
    t = 2.0
    while t <= BALANCE_MAX_T:
        scaled = dec.upper * t**expo
        if operator_norm(scaled) < kappa:
            return t, dec.block_diag + scaled
        t *= 2.0
    raise NonConvergenceError(
        f"kappa={kappa} not reached with t <= 2^60", last_iterate=t / 2.0
    )


def balancing_matrix(dec: JordanLikeDecomposition, t: float) -> np.ndarray:
    """The diagonal similarity ``D_t`` used by :func:`balance`."""
    return np.diag(float(t) ** dec.block_index().astype(np.float64))
