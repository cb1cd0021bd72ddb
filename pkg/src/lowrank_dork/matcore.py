"""Dense linear-algebra kernels shared by the retractions and integrators.

Everything here is a pure function of its inputs. Matrices are plain
``numpy.ndarray`` objects; low-rank operands may also be passed as a
:class:`Factored` pair ``(a, b)`` standing for ``a @ b.T``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la


class LowRankError(ArithmeticError):
    """Base class for numerical failures raised by this package."""


class RankDeficient(LowRankError):
    pass


class IllConditioned(LowRankError):
    pass


class ZeroMatrix(LowRankError):
    pass


@dataclass(frozen=True)
class Factored:
    """Implicit matrix ``a @ b.T`` with ``a`` m-by-k and ``b`` n-by-k."""

    a: np.ndarray
    b: np.ndarray

    # let ndarray operators defer to ours
    __array_ufunc__ = None

    @property
    def shape(self):
        return (self.a.shape[0], self.b.shape[0])

    @property
    def T(self):
        return Factored(self.b, self.a)

    def __matmul__(self, other):
        return self.a @ (self.b.T @ other)

    def __neg__(self):
        return Factored(-self.a, self.b)

    def __mul__(self, alpha):
        return Factored(alpha * self.a, self.b)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, Factored):
            return Factored(np.hstack([self.a, other.a]), np.hstack([self.b, other.b]))
        return self.toarray() + other

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return self + (-1.0 * other)

    def __rsub__(self, other):
        return (-self) + other

    def toarray(self):
        return self.a @ self.b.T


def dense(d):
    """Materialize a dense or factored matrix."""
    if isinstance(d, Factored):
        return d.toarray()
    return np.asarray(d)


def fro_norm(d):
    """Frobenius norm without materializing factored operands."""
    if isinstance(d, Factored):
        val = np.sum((d.a.T @ d.a) * (d.b.T @ d.b))
        return float(np.sqrt(max(val, 0.0)))
    return float(np.linalg.norm(d))


def tmul(d, m):
    """Return ``d.T @ m`` for dense or factored ``d``."""
    if isinstance(d, Factored):
        return d.b @ (d.a.T @ m)
    return d.T @ m


@dataclass(frozen=True)
class OrthResult:
    q: np.ndarray
    r: np.ndarray

    @property
    def g(self):
        """Right factor with ``input @ g == q`` (inverse of the triangular factor)."""
        return la.solve_triangular(self.r, np.eye(self.r.shape[0]))


def orth(a, check=True):
    """Orthonormalize the columns of ``a`` with a sign-fixed Householder QR.

    The diagonal of the triangular factor is made nonnegative so the output is
    deterministic. With ``check`` on, a numerically rank-deficient input
    (smallest |R_jj| below ``1e-13 * ||a||``) raises :class:`RankDeficient`;
    with it off the returned ``q`` is still orthonormal, its extra columns just
    complete the basis.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[1] == 0:
        return OrthResult(a.copy(), np.zeros((0, 0)))
    q, r = np.linalg.qr(a)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    q = q * signs
    r = r * signs[:, None]
    if check:
        scale = np.linalg.norm(a)
        if scale == 0 or np.min(np.abs(np.diag(r))) < 1e-13 * scale:
            raise RankDeficient(f"numerical rank below {a.shape[1]}")
    return OrthResult(q, r)


@dataclass(frozen=True)
class SvdTrunc:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def toarray(self):
        return (self.u * self.s) @ self.v.T


def svd_trunc(a, k):
    """Best rank-``k`` approximation of ``a`` (dense or factored) in Frobenius norm."""
    m, n = a.shape
    if k > min(m, n) or k < 0:
        raise ValueError(f"k={k} exceeds min{(m, n)}")
    if isinstance(a, Factored):
        # thin QR of both factors, then the SVD of the small core
        qa, ra = np.linalg.qr(a.a)
        qb, rb = np.linalg.qr(a.b)
        uc, s, vct = np.linalg.svd(ra @ rb.T)
        u, v = qa @ uc, qb @ vct.T
        if k > s.size:
            # zero-padded tail: complete the bases orthonormally
            u = _complete(u, k)
            v = _complete(v, k)
            s = np.concatenate([s, np.zeros(k - s.size)])
        return SvdTrunc(u[:, :k], s[:k], v[:, :k])
    u, s, vt = np.linalg.svd(np.asarray(a, dtype=float), full_matrices=False)
    return SvdTrunc(u[:, :k], s[:k], vt[:k].T)


def _complete(q, k):
    m = q.shape[0]
    extra = np.eye(m)[:, : max(k, q.shape[1])]
    full = orth(np.hstack([q, extra]), check=False).q
    # columns past rank(q) are rebuilt by QR; keep q's own columns verbatim
    out = full[:, :k].copy()
    out[:, : q.shape[1]] = q
    return out


def rand_range(a, k, oversample=5, seed=0, power_iters=0):
    """Randomized range finder returning an m-by-k orthonormal basis.

    Gaussian sketch with ``k + oversample`` columns and optional subspace
    iterations, followed by an SVD of the projected matrix so the ``k``
    retained directions are the dominant ones of the sketch.
    """
    m, n = a.shape
    p = max(0, min(oversample, min(m, n) - k))
    ell = k + p
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n, ell))
    y = a @ omega
    q = orth(y, check=False).q
    for _ in range(power_iters):
        q = orth(tmul(a, q), check=False).q
        q = orth(a @ q, check=False).q
    b = tmul(a, q).T
    ub, _, _ = np.linalg.svd(b, full_matrices=False)
    return q @ ub[:, :k]


def sym_eig_asc(a):
    """Eigen-decomposition of a symmetric matrix, eigenvalues ascending.

    Ties keep the original column order (stable sort), which makes rank
    truncation decisions reproducible.
    """
    a = np.asarray(a, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def pseudo_solve(a, b, rel_cut=1e-9):
    """Minimum-norm least-squares solution of ``a x = b`` for symmetric PSD ``a``.

    Eigenvalues below ``rel_cut * lambda_max`` are discarded. When nothing is
    discarded the solve goes through a Cholesky factor ``R^T R`` obtained from
    the QR of ``sqrt(Lambda) V^T`` and two triangular substitutions.
    """
    if not 0 < rel_cut < 1:
        raise ValueError("rel_cut must lie in (0, 1)")
    b = np.asarray(b, dtype=float)
    vals, vecs = sym_eig_asc(a)
    lam_max = vals[-1] if vals.size else 0.0
    if lam_max <= 0:
        if np.any(b != 0):
            raise ZeroMatrix("cannot solve against a zero matrix")
        return np.zeros_like(b)
    keep = vals >= rel_cut * lam_max
    if np.all(keep):
        _, r = np.linalg.qr(np.sqrt(vals)[:, None] * vecs.T)
        y = la.solve_triangular(r, b, trans="T")
        return la.solve_triangular(r, y)
    vk = vecs[:, keep]
    return vk @ ((vk.T @ b) / vals[keep][:, None])
