"""Dense real Hilbert-space kernel: vectors, operators, factorizations.

Vectors are plain 1-D float64 numpy arrays; :func:`as_vector` validates
shape and finiteness at API boundaries.  :class:`DenseOperator` wraps a
square matrix together with structural flags (self-adjoint, positive
semidefinite) and caches factorizations behind a lock, so a single
operator may be shared by concurrent readers.

Tolerances below are module-level defaults; the operations that use them
accept per-call overrides.
"""

import threading
import warnings

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotSymmetric, NonPsdOperator, ParseError, SingularOperator

__all__ = [
    "VectorH",
    "DenseOperator",
    "as_vector",
    "inner",
    "norm",
    "solve_linear",
    "operator_norm",
    "smallest_singular_value",
    "symmetric_eigen",
    "parse_matrix_text",
    "format_matrix_text",
    "read_matrix_text",
    "write_matrix_text",
]

#: Elements of the ambient space are 1-D float64 arrays.
VectorH = np.ndarray

SELF_ADJOINT_RTOL = 1e-12    # max |A - A^T| allowed, relative to operator norm
PSD_RTOL = 1e-10             # eigenvalue floor for psd-flagged operators
PIVOT_RTOL = 1e-14           # LU pivot threshold, relative to operator norm
EIGEN_RESIDUAL_RTOL = 1e-9   # accuracy contract of symmetric_eigen


def as_vector(x, dim=None, name="vector"):
    """Validate ``x`` as a finite 1-D float vector, optionally of length ``dim``."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise DimensionMismatch(f"{name} has dimension {v.size}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def inner(u, v):
    """Euclidean inner product (u, v)."""
    u = as_vector(u)
    v = as_vector(v, dim=u.size, name="second vector")
    return float(np.dot(u, v))


def norm(u):
    """Norm induced by :func:`inner`."""
    return float(np.linalg.norm(as_vector(u)))


class DenseOperator:
    """Square real matrix with structural flags and cached factorizations.

    Parameters
    ----------
    entries : array_like
        Square matrix of finite reals.  A private copy is stored.
    self_adjoint : bool
        Claim that the matrix equals its transpose.  Verified at
        construction against ``SELF_ADJOINT_RTOL`` times the operator norm;
        violation raises :class:`NotSymmetric`.
    psd_claimed : bool
        Claim that the matrix is positive semidefinite.  Requires
        ``self_adjoint`` and is verified against ``PSD_RTOL``; violation
        raises :class:`NonPsdOperator`.
    """

    def __init__(self, entries, self_adjoint=False, psd_claimed=False, *, _verified=False):
        A = np.array(entries, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"operator must be square, got shape {A.shape}")
        if A.shape[0] == 0:
            raise DimensionMismatch("operator must have positive dimension")
        if not np.all(np.isfinite(A)):
            raise ValueError("operator contains non-finite entries")
        if psd_claimed and not self_adjoint:
            raise ValueError("psd_claimed requires self_adjoint")
        self.entries = A
        self.self_adjoint = bool(self_adjoint)
        self.psd_claimed = bool(psd_claimed)
        self._lock = threading.Lock()
        self._svals = None
        self._lu = None
        self._eigen = None
        if not _verified:
            self._verify_flags()

    # -- construction helpers -------------------------------------------------

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), self_adjoint=True, psd_claimed=True, _verified=True)

    @classmethod
    def diagonal(cls, values, psd_claimed=None):
        d = as_vector(values, name="diagonal")
        if psd_claimed is None:
            psd_claimed = bool(np.all(d >= 0.0))
        return cls(np.diag(d), self_adjoint=True, psd_claimed=psd_claimed)

    def shifted(self, eps):
        """Return this operator plus ``eps`` times the identity (``eps >= 0``)."""
        eps = float(eps)
        if not np.isfinite(eps) or eps < 0.0:
            raise ValueError(f"shift must be a finite nonnegative real, got {eps}")
        A = self.entries + eps * np.eye(self.dim)
        # self-adjointness and (for eps >= 0) semidefiniteness survive the shift
        return DenseOperator(A, self_adjoint=self.self_adjoint,
                             psd_claimed=self.psd_claimed, _verified=True)

    # -- basic queries ---------------------------------------------------------

    @property
    def dim(self):
        return self.entries.shape[0]

    def apply(self, u):
        u = as_vector(u, dim=self.dim)
        return self.entries @ u

    def _verify_flags(self):
        if not self.self_adjoint:
            return
        defect = float(np.max(np.abs(self.entries - self.entries.T)))
        opn = self.operator_norm()
        if defect > SELF_ADJOINT_RTOL * opn:
            raise NotSymmetric(
                f"self_adjoint flag violated: asymmetry {defect:.3e} "
                f"exceeds {SELF_ADJOINT_RTOL:g} * operator norm {opn:.3e}")
        if self.psd_claimed:
            w, _ = self.symmetric_eigen()
            if w[0] < -PSD_RTOL * opn:
                raise NonPsdOperator(
                    f"psd flag violated: smallest eigenvalue {w[0]:.3e} "
                    f"below -{PSD_RTOL:g} * operator norm {opn:.3e}")

    # -- spectral quantities ---------------------------------------------------

    def singular_values(self):
        """All singular values, descending."""
        with self._lock:
            if self._svals is None:
                self._svals = np.linalg.svd(self.entries, compute_uv=False)
            return self._svals.copy()

    def operator_norm(self):
        """Largest singular value."""
        return float(self.singular_values()[0])

    def smallest_singular_value(self):
        """Smallest singular value; zero signals singularity."""
        return float(self.singular_values()[-1])

    def condition_estimate(self):
        s = self.singular_values()
        if s[-1] == 0.0:
            return float("inf")
        return float(s[0] / s[-1])

    def symmetric_eigen(self):
        """Eigen-decomposition ``A = Q diag(w) Q^T`` for self-adjoint operators.

        Returns eigenvalues ascending and an orthonormal eigenbasis, both as
        fresh arrays.  Raises :class:`NotSymmetric` if the flag is not set.
        The reconstruction satisfies ``|A Q - Q diag(w)| <= 1e-9 * |A|``.
        """
        if not self.self_adjoint:
            raise NotSymmetric("symmetric_eigen requires the self_adjoint flag")
        with self._lock:
            if self._eigen is None:
                sym = 0.5 * (self.entries + self.entries.T)
                self._eigen = np.linalg.eigh(sym)
            w, Q = self._eigen
            return w.copy(), Q.copy()

    # -- linear solves -----------------------------------------------------------

    def _factorize(self):
        with self._lock:
            if self._lu is None:
                with warnings.catch_warnings():
                    # near-singular factorizations are handled by the pivot check
                    warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                    lu, piv = scipy.linalg.lu_factor(self.entries)
                minpiv = float(np.min(np.abs(np.diag(lu))))
                self._lu = (lu, piv, minpiv)
            return self._lu

    def solve(self, b, pivot_rtol=None):
        """Solve ``A x = b`` through the cached LU factorization.

        ``b`` may be a vector or a matrix of stacked right-hand-side columns.
        Raises :class:`SingularOperator` when the smallest pivot falls below
        ``pivot_rtol`` (default ``PIVOT_RTOL``) times the operator norm.
        """
        rtol = PIVOT_RTOL if pivot_rtol is None else float(pivot_rtol)
        B = np.asarray(b, dtype=float)
        if B.shape[0] != self.dim:
            raise DimensionMismatch(
                f"right-hand side has leading dimension {B.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(B)):
            raise ValueError("right-hand side contains non-finite entries")
        opn = self.operator_norm()
        if opn == 0.0:
            raise SingularOperator("zero operator", condition_estimate=float("inf"))
        lu, piv, minpiv = self._factorize()
        if minpiv <= rtol * opn:
            raise SingularOperator(
                f"pivot {minpiv:.3e} below {rtol:g} * operator norm {opn:.3e}",
                condition_estimate=self.condition_estimate())
        return scipy.linalg.lu_solve((lu, piv), B)


# -- module-level operation surface (thin wrappers over DenseOperator) ----------

def solve_linear(A, b, pivot_rtol=None):
    """Solve ``A x = b`` for a vector right-hand side."""
    x = A.solve(as_vector(b, dim=A.dim, name="right-hand side"), pivot_rtol=pivot_rtol)
    return x


def operator_norm(A):
    return A.operator_norm()


def smallest_singular_value(A):
    return A.smallest_singular_value()


def symmetric_eigen(A):
    return A.symmetric_eigen()


# -- matrix text format ----------------------------------------------------------
#
# Line 1:            dim <n>
# Lines 2 .. n+1:    n space-separated decimal reals each
# Optional last line: flags self_adjoint psd   (any subset, this order free)

_KNOWN_FLAGS = {"self_adjoint", "psd"}


def format_matrix_text(A):
    """Serialize an operator to the plain-text matrix format (17 significant digits)."""
    lines = [f"dim {A.dim}"]
    for row in A.entries:
        lines.append(" ".join(format(x, ".17g") for x in row))
    flags = []
    if A.self_adjoint:
        flags.append("self_adjoint")
    if A.psd_claimed:
        flags.append("psd")
    if flags:
        lines.append("flags " + " ".join(flags))
    return "\n".join(lines) + "\n"


def parse_matrix_text(text):
    """Parse the plain-text matrix format into a :class:`DenseOperator`.

    Raises :class:`ParseError` on malformed input.  Flag violations surface
    as :class:`NotSymmetric` / :class:`NonPsdOperator` from the constructor.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ParseError("empty matrix text")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "dim":
        raise ParseError(f"line 1: expected 'dim <n>', got {lines[0]!r}")
    try:
        n = int(head[1])
    except ValueError:
        raise ParseError(f"line 1: dimension {head[1]!r} is not an integer") from None
    if n <= 0:
        raise ParseError(f"line 1: dimension must be positive, got {n}")
    if len(lines) < 1 + n:
        raise ParseError(f"expected {n} matrix rows, found {len(lines) - 1}")
    rows = []
    for i, ln in enumerate(lines[1:1 + n], start=2):
        parts = ln.split()
        if len(parts) != n:
            raise ParseError(f"line {i}: expected {n} entries, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(f"line {i}: non-numeric entry") from None
    flags = set()
    rest = lines[1 + n:]
    if rest:
        if len(rest) > 1 or not rest[0].startswith("flags"):
            raise ParseError("unexpected content after matrix rows")
        tokens = rest[0].split()[1:]
        unknown = set(tokens) - _KNOWN_FLAGS
        if unknown:
            raise ParseError(f"unknown flags: {sorted(unknown)}")
        flags = set(tokens)
    return DenseOperator(rows, self_adjoint="self_adjoint" in flags,
                         psd_claimed="psd" in flags)


def read_matrix_text(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_matrix_text(fh.read())


def write_matrix_text(A, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_matrix_text(A))
