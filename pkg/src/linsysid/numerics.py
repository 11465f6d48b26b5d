"""Dense linear-algebra and sampling kernels shared by the other modules.

Everything here works on small matrices (d up to a few dozen). The symmetric
eigensolver is a cyclic Jacobi iteration; singular values of tall matrices are
read off the d x d Gram matrix, which is also the object the OLS error
analysis works with.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NoConvergence, NonSymmetric, NotPositiveDefinite

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def as_matrix(A) -> np.ndarray:
    """Coerce to a finite 2-D float64 array (scalars become 1x1)."""
    M = np.array(A, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


# ---------------------------------------------------------------------------
# symmetric eigendecomposition
# ---------------------------------------------------------------------------

class SymEigen(NamedTuple):
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # orthonormal columns, same order


def _check_symmetric(A: np.ndarray, rtol: float) -> None:
    if A.shape[0] != A.shape[1]:
        raise NonSymmetric(f"matrix is not square: {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 0.0)
    asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    if asym > rtol * scale:
        raise NonSymmetric(f"asymmetry {asym:.3e} exceeds {rtol:g} relative")


def sym_eigen(A, tol: float = 1e-14, max_sweeps: int = 100,
              sym_rtol: float = 1e-12) -> SymEigen:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius mass drops below
    ``tol * ||A||_F``. Raises ``NoConvergence`` after ``max_sweeps``.
    """
    A = as_matrix(A)
    _check_symmetric(A, sym_rtol)
    n = A.shape[0]
    a = 0.5 * (A + A.T)
    v = np.eye(n)
    if n == 1:
        return SymEigen(a.diagonal().copy(), v)

    scale = math.sqrt(float(np.sum(a * a)))
    if scale == 0.0:
        return SymEigen(np.zeros(n), v)
    target = tol * scale
    iu = np.triu_indices(n, 1)

    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(a[iu] ** 2)))
        if off < target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = math.sqrt(2.0 * float(np.sum(a[iu] ** 2)))
        if off >= target:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps "
                                f"(off-diagonal mass {off:.3e})")

    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return SymEigen(w[order], v[:, order])


def sym_function(A, fn) -> np.ndarray:
    """Apply a scalar function to the spectrum of a symmetric matrix."""
    w, Q = sym_eigen(A)
    return (Q * fn(w)) @ Q.T


def eigvalsh(A) -> np.ndarray:
    return sym_eigen(A).eigenvalues


# ---------------------------------------------------------------------------
# norms, singular values, pseudo-inverse
# ---------------------------------------------------------------------------

def singular_values(A) -> np.ndarray:
    """Singular values in descending order, via the smaller Gram matrix."""
    A = as_matrix(A)
    G = A.T @ A if A.shape[0] >= A.shape[1] else A @ A.T
    w = sym_eigen(G).eigenvalues
    return np.sqrt(np.maximum(w, 0.0))[::-1]


def operator_norm(A) -> float:
    """Largest singular value ||A||_op."""
    A = as_matrix(A)
    if A.size == 0:
        return 0.0
    return float(singular_values(A)[0])


def smallest_singular_value(A) -> float:
    A = as_matrix(A)
    return float(singular_values(A)[-1])


def frobenius_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    return math.sqrt(float(np.sum(A * A)))


def rank_tolerance(eigs: np.ndarray, d: int) -> float:
    # Gram eigenvalues carry the square of the design's condition number, so
    # the cut is applied on the Gram spectrum: lambda_i < d * eps * lambda_max.
    lam_max = float(np.max(eigs)) if eigs.size else 0.0
    return d * np.finfo(float).eps * max(lam_max, 0.0)


def gram_pinv(G) -> tuple[np.ndarray, int, np.ndarray]:
    """Pseudo-inverse of a PSD Gram matrix.

    Returns ``(G_pinv, numerical_rank, eigenvalues)``.
    """
    G = as_matrix(G)
    d = G.shape[0]
    w, Q = sym_eigen(G)
    tol = rank_tolerance(w, d)
    keep = w > tol
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return (Q * inv) @ Q.T, int(np.count_nonzero(keep)), w


# ---------------------------------------------------------------------------
# matrix exponential
# ---------------------------------------------------------------------------

_TAYLOR_DEGREE = 18


def matrix_exp(X) -> np.ndarray:
    """exp(X) by scaling and squaring with a degree-18 Taylor polynomial.

    The squaring count is ``max(0, ceil(log2 ||X||_1) + 1)``, which keeps the
    scaled argument below 1 in the 1-norm.
    """
    X = as_matrix(X)
    n = X.shape[0]
    if X.shape[1] != n:
        raise ValueError("matrix_exp needs a square matrix")
    norm1 = float(np.max(np.sum(np.abs(X), axis=0))) if n else 0.0
    s = 0 if norm1 == 0.0 else max(0, math.ceil(math.log2(norm1)) + 1)
    Xs = X / (2.0 ** s)
    I = np.eye(n)
    E = I.copy()
    for j in range(_TAYLOR_DEGREE, 0, -1):  # Horner: I + X/1 (I + X/2 (I + ...))
        E = I + (Xs @ E) / j
    for _ in range(s):
        E = E @ E
    return E


def random_skew(rng: "RngStream", d: int, scale: float = 1.0) -> np.ndarray:
    G = gaussian_vector(rng, d * d, 1.0).reshape(d, d)
    return scale * (G - G.T) / math.sqrt(2.0)


def log_det_ratio(Ga, Gb) -> float:
    """log det(Ga) - log det(Gb) for SPD arguments, from eigenvalues."""
    wa = eigvalsh(Ga)
    wb = eigvalsh(Gb)
    if np.any(wa <= 0.0) or np.any(wb <= 0.0):
        raise NotPositiveDefinite("log_det_ratio needs positive definite matrices")
    return float(np.sum(np.log(wa)) - np.sum(np.log(wb)))


def log_det(G) -> float:
    w = eigvalsh(G)
    if np.any(w <= 0.0):
        raise NotPositiveDefinite("matrix is not positive definite")
    return float(np.sum(np.log(w)))


def batch_log_det(G) -> np.ndarray:
    """log det of each SPD matrix in a (..., d, d) stack via a column-wise Cholesky.

    The factorisation loops over the d columns and is vectorised over the
    stack, so long Gramian series cost O(T d^3) array work, not T eigensolves.
    """
    G = np.array(G, dtype=float)
    d = G.shape[-1]
    L = np.zeros_like(G)
    out = np.zeros(G.shape[:-2])
    for j in range(d):
        piv = G[..., j, j] - np.sum(L[..., j, :j] ** 2, axis=-1)
        if np.any(piv <= 0.0):
            raise NotPositiveDefinite("matrix is not positive definite")
        L[..., j, j] = np.sqrt(piv)
        out += np.log(piv)
        if j + 1 < d:
            below = G[..., j + 1:, j] - np.einsum("...ik,...k->...i", L[..., j + 1:, :j],
                                                   L[..., j, :j])
            L[..., j + 1:, j] = below / L[..., j, j][..., None]
    return out


def inv_sqrt_spd(S) -> np.ndarray:
    w, Q = sym_eigen(S)
    if np.any(w <= 0.0):
        raise NotPositiveDefinite("matrix is not positive definite")
    return (Q / np.sqrt(w)) @ Q.T


def sqrt_spd(S) -> np.ndarray:
    w, Q = sym_eigen(S)
    if np.any(w <= 0.0):
        raise NotPositiveDefinite("matrix is not positive definite")
    return (Q * np.sqrt(w)) @ Q.T


# ---------------------------------------------------------------------------
# counter-based random streams
# ---------------------------------------------------------------------------

_local = threading.local()


def _philox_raw(key0: int, key1: int, block: int, n: int) -> np.ndarray:
    # Re-keying one per-thread Philox is ~3x cheaper than constructing a new
    # one, which matters when every Monte Carlo trial owns a stream.
    bg = getattr(_local, "philox", None)
    if bg is None:
        bg = _local.philox = np.random.Philox(0)
    bg.state = {
        "bit_generator": "Philox",
        "state": {"counter": np.array([block & _MASK64, block >> 64, 0, 0], dtype=np.uint64),
                  "key": np.array([key0 & _MASK64, key1 & _MASK64], dtype=np.uint64)},
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }
    return bg.random_raw(n)


@dataclass
class RngStream:
    """A reproducible random stream addressed by ``(master_seed, stream_id)``.

    Words come from the Philox-4x64 counter-based generator keyed by the seed
    pair; ``counter`` counts 64-bit words consumed so far. Two streams with the
    same key and counter produce the same words, and distinct ``stream_id``
    values give independent streams. Share a stream between threads only by
    giving each thread its own ``stream_id``.
    """
    master_seed: int
    stream_id: int = 0
    counter: int = 0

    def words(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words; advances the counter by ``n``."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        block, offset = divmod(self.counter, 4)
        out = _philox_raw(self.master_seed, self.stream_id, block, offset + n)[offset:]
        self.counter += n
        return out

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id, 0)

    def generator(self) -> np.random.Generator:
        """A numpy Generator on a fresh Philox keyed by this stream's seed pair.

        Meant for auxiliary resampling (bootstrap); does not touch ``counter``.
        """
        return np.random.Generator(np.random.Philox(
            key=[self.master_seed & _MASK64, (self.stream_id ^ 0x9E3779B97F4A7C15) & _MASK64]))


def _unit_open_closed(words: np.ndarray) -> np.ndarray:
    # (0, 1]: never zero, safe for log
    return ((words >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53


def uniform(rng: RngStream, n: int) -> np.ndarray:
    """``n`` uniforms on [0, 1) with 53-bit resolution."""
    return (rng.words(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def standard_normals(rng: RngStream, n: int) -> np.ndarray:
    """``n`` N(0, 1) draws by Box-Muller; consumes ``2 * ceil(n / 2)`` words."""
    m = (n + 1) // 2
    return _box_muller(rng.words(2 * m)[None])[0, :n]


def _box_muller(w: np.ndarray) -> np.ndarray:
    # rows of 2m words -> rows of 2m normals, pairs (cos, sin) interleaved
    u1 = _unit_open_closed(w[:, 0::2])
    u2 = (w[:, 1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(w.shape, dtype=np.float64)
    z[:, 0::2] = r * np.cos(_TWO_PI * u2)
    z[:, 1::2] = r * np.sin(_TWO_PI * u2)
    return z


def gaussian_vector(rng: RngStream, d: int, scale: float = 1.0) -> np.ndarray:
    """``d`` i.i.d. N(0, scale^2) draws."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    return scale * standard_normals(rng, d)


def trial_normals(master_seed: int, stream_ids, n: int, scale: float = 1.0) -> np.ndarray:
    """Row i holds the first ``n`` N(0, scale^2) draws of stream ``stream_ids[i]``.

    Identical to calling ``gaussian_vector(RngStream(master_seed, sid), n, scale)``
    once per stream, so batched and one-at-a-time simulations agree bit for bit.
    """
    ids = list(stream_ids)
    m = (n + 1) // 2
    words = np.empty((len(ids), 2 * m), dtype=np.uint64)
    for i, sid in enumerate(ids):
        words[i] = RngStream(master_seed, int(sid)).words(2 * m)
    return scale * _box_muller(words)[:, :n]


def normal_cdf(z):
    """Standard normal CDF through erfc, accurate in both tails."""
    return 0.5 * _erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def normal_sf(z):
    return 0.5 * _erfc(np.asarray(z, dtype=float) / math.sqrt(2.0))


def _erfc(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return math.erfc(float(x))
    return np.vectorize(math.erfc, otypes=[float])(x)
