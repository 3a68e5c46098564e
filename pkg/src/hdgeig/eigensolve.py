"""Trace eigenproblem solvers and the full-problem oracle.

Three routes to the spectrum:

* the linear surrogate pencil (stiffness vs. scalar-lift Gram), a plain
  symmetric generalized eigenproblem whose lowest eigenvalues seed
* the condensed nonlinear eigenproblem.  Freezing the resolvent Gram
  matrix at a trial value kappa and taking the matching pencil
  eigenvalue theta_i(kappa) defines a scalar residual
  F(kappa) = theta_i(kappa) - kappa that is strictly decreasing (the
  frozen Gram matrix grows with kappa), so each eigenvalue is the unique
  root of F.  The solver runs a bracketed secant iteration on F, which
  reduces to the plain frozen-operator fixed point when that contracts
  and stays convergent on coarse meshes where it does not; and
* a brute-force oracle that assembles the matrix of the discrete source
  solution operator column by column and diagonalizes it, feasible on
  coarse meshes and used to validate the condensed route.

The surrogate Gram matrix may have a nontrivial kernel (it does for
k = 0); all pencils are therefore solved in inverted form with the
positive definite stiffness matrix on the right-hand side.
"""

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .assembly import assemble_condensed, assemble_m_of_lambda, recover_source_fields
from .errors import ConvergenceError, EigenSolveError
from .localsolve import MaterialSpec

__all__ = [
    "SurrogatePair",
    "EigenPair",
    "OracleSpectrum",
    "sym_gen_eig_lowest",
    "solve_linear_surrogate",
    "solve_condensed_nonlinear",
    "oracle_full_eig",
]

_DENSE_CUTOFF = 900
_RESIDUAL_TOL = 1e-9
_KERNEL_FLOOR = 1e-12


class SurrogatePair:
    """Eigenpair of the linear surrogate pencil, Gram-normalized.

    ``index`` is the 1-based position in the ascending surrogate
    spectrum; the nonlinear solver locks onto the same position.
    """

    def __init__(self, value, vector, index=None):
        self.value = float(value)
        self.vector = np.asarray(vector, dtype=float)
        self.index = index


class EigenPair:
    """Converged eigenpair of the condensed nonlinear problem."""

    def __init__(self, value, vector, iterations, defect, history):
        self.value = float(value)
        self.vector = np.asarray(vector, dtype=float)
        self.iterations = int(iterations)
        self.defect = float(defect)
        self.history = list(history)


class OracleSpectrum:
    """Ascending eigenvalues of the full problem via the solution operator."""

    def __init__(self, values, t_matrix):
        self.values = np.asarray(values, dtype=float)
        self.t_matrix = t_matrix


def _deterministic_start(n):
    return np.random.default_rng(20240814).standard_normal(n)


def _as_dense(mat):
    return mat.toarray() if scipy.sparse.issparse(mat) else np.asarray(mat)


def sym_gen_eig_lowest(a, b, m):
    """Lowest m eigenpairs of the symmetric pencil (a, b), b positive definite.

    Returns ascending eigenvalues and b-orthonormal eigenvectors; each
    residual is verified against the pencil before returning.
    """
    n = a.shape[0]
    m = int(m)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise EigenSolveError("matrix shapes do not match")
    if not 1 <= m <= n:
        raise EigenSolveError("cannot compute %d modes of an n=%d pencil" % (m, n))
    if n <= _DENSE_CUTOFF:
        try:
            vals, vecs = scipy.linalg.eigh(
                _as_dense(a), _as_dense(b), subset_by_index=[0, m - 1], driver="gvx"
            )
        except np.linalg.LinAlgError as exc:
            raise EigenSolveError("right-hand matrix is not positive definite: %s" % exc)
    else:
        try:
            vals, vecs = scipy.sparse.linalg.eigsh(
                scipy.sparse.csc_matrix(a), k=m, M=scipy.sparse.csc_matrix(b),
                sigma=0.0, which="LM", mode="normal", v0=_deterministic_start(n),
            )
        except scipy.sparse.linalg.ArpackNoConvergence as exc:
            raise EigenSolveError("sparse eigensolver did not converge: %s" % exc)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    _check_pencil_residuals(a, b, vals, vecs)
    return vals, vecs


def _check_pencil_residuals(a, b, vals, vecs, tol=1e-10):
    av = a @ vecs
    bv = b @ vecs
    for i, lam in enumerate(vals):
        res = np.linalg.norm(av[:, i] - lam * bv[:, i])
        scale = max(np.linalg.norm(av[:, i]), 1e-300)
        if res > tol * max(scale, abs(lam) * np.linalg.norm(bv[:, i])):
            raise EigenSolveError(
                "eigenpair %d residual %.2e exceeds tolerance" % (i, res)
            )


def _stiffness_inverse_operator(sys):
    """LinearOperator applying the cached stiffness factorization."""
    lu = sys.factorized()
    n = sys.ndof
    return scipy.sparse.linalg.LinearOperator((n, n), matvec=lu.solve)


def _inverted_pencil_largest(p, q, m, v0=None, qinv=None):
    """Largest m eigenvalues of p x = mu q x with q positive definite.

    Used with the possibly singular Gram matrix on the left so that its
    kernel maps harmlessly to mu = 0.  ``qinv`` may supply a reusable
    factorization of q.
    """
    n = p.shape[0]
    if n <= _DENSE_CUTOFF or m >= n - 1:
        vals, vecs = scipy.linalg.eigh(_as_dense(p), _as_dense(q))
        sel = np.argsort(vals)[::-1][:m]
    else:
        vals, vecs = scipy.sparse.linalg.eigsh(
            scipy.sparse.csc_matrix(p), k=m, M=scipy.sparse.csc_matrix(q),
            which="LM", v0=v0 if v0 is not None else _deterministic_start(n),
            Minv=qinv,
        )
        sel = np.argsort(vals)[::-1]
    return vals[sel], vecs[:, sel]


def solve_linear_surrogate(sys, m):
    """Lowest m eigenpairs of the surrogate pencil (stiffness, lift Gram).

    The Gram matrix is only positive semidefinite; requested modes must
    stay clear of its numerical kernel, otherwise the space configuration
    cannot resolve them and an error is raised.
    """
    m = int(m)
    if not 1 <= m <= sys.ndof:
        raise EigenSolveError("requested %d modes of an n=%d system" % (m, sys.ndof))
    qinv = _stiffness_inverse_operator(sys) if sys.ndof > _DENSE_CUTOFF else None
    mu, vecs = _inverted_pencil_largest(sys.G, sys.A, m, qinv=qinv)
    if mu[0] <= 0:
        raise EigenSolveError("surrogate Gram matrix is numerically zero")
    if mu[-1] <= _KERNEL_FLOOR * mu[0]:
        raise EigenSolveError(
            "surrogate Gram matrix is singular at the requested mode count "
            "(mode %d lies in its kernel); this flags a space configuration "
            "that cannot resolve that many modes" % m
        )
    pairs = []
    for i in range(m):
        lam = 1.0 / mu[i]
        vec = vecs[:, i]
        gnorm = vec @ (sys.G @ vec)
        vec = vec / np.sqrt(gnorm)
        res = np.linalg.norm(sys.A @ vec - lam * (sys.G @ vec))
        if res > _RESIDUAL_TOL * np.linalg.norm(sys.A @ vec):
            raise EigenSolveError("surrogate eigenpair %d residual too large" % (i + 1))
        pairs.append(SurrogatePair(lam, vec, index=i + 1))
    return pairs


def _pencil_positive_modes(amat, mmat, count, v0=None, ainv=None):
    """Lowest ``count`` positive eigenvalues theta of a x = theta m x.

    Solved as the inverted pencil m x = (1/theta) a x so that a singular
    m only contributes harmless zero eigenvalues.
    """
    n = amat.shape[0]
    if n <= _DENSE_CUTOFF:
        w, vecs = scipy.linalg.eigh(_as_dense(mmat), _as_dense(amat))
    else:
        k = min(max(count + 2, 6), n - 1)
        try:
            w, vecs = scipy.sparse.linalg.eigsh(
                scipy.sparse.csc_matrix(mmat), k=k, M=scipy.sparse.csc_matrix(amat),
                which="LA", v0=v0 if v0 is not None else _deterministic_start(n),
                Minv=ainv,
            )
        except scipy.sparse.linalg.ArpackNoConvergence as exc:
            raise EigenSolveError("sparse pencil eigensolver did not converge: %s" % exc)
    floor = _KERNEL_FLOOR * np.abs(w).max()
    pos = np.flatnonzero(w > floor)
    if pos.size < count:
        raise EigenSolveError(
            "frozen pencil has only %d positive modes, need %d" % (pos.size, count)
        )
    # largest w correspond to the smallest theta = 1/w
    pos = pos[np.argsort(w[pos])[::-1][:count]]
    return 1.0 / w[pos], vecs[:, pos]


def _resolvent_limit(sys):
    """First resolvent resonance: the smallest eigenvalue parameter at
    which I - lam * Uw becomes singular on some element.  The condensed
    problem represents every eigenvalue strictly below this wall."""
    rho = 0.0
    for ops in sys.classes:
        rho = max(rho, float(np.linalg.eigvalsh(0.5 * (ops.uwmat + ops.uwmat.T)).max()))
    return np.inf if rho == 0.0 else 1.0 / rho


def solve_condensed_nonlinear(sys, seed, rel_tol=1e-12, max_iter=50):
    """Refine a surrogate eigenpair into a condensed nonlinear eigenpair.

    Each iteration freezes the resolvent Gram matrix at the current
    iterate kappa and solves the resulting linear pencil for the
    eigenvalue theta at the seed's spectral index.  The first update is
    the plain fixed-point step kappa <- theta; afterwards a secant step
    on F(kappa) = theta(kappa) - kappa is used, kept inside the bracket
    that the sign of F provides (F is strictly decreasing).  On fine
    meshes the fixed point contracts and the secant just accelerates it;
    on coarse meshes it keeps the iteration from oscillating.
    """
    lam = float(seed.value)
    if lam <= 0:
        raise EigenSolveError("seed eigenvalue must be positive")
    vec = getattr(seed, "vector", None)
    index = getattr(seed, "index", None)
    # stay strictly inside the first resonance-free interval of the
    # resolvent; eigenvalues beyond the wall are not representable here
    lam_cap = (1.0 - 1e-3) * _resolvent_limit(sys)
    kappa = min(lam, lam_cap)
    ainv = _stiffness_inverse_operator(sys) if sys.ndof > _DENSE_CUTOFF else None
    lo, hi = 0.0, None  # F(0) = surrogate value > 0
    prev = None
    history = [kappa]

    for iteration in range(1, int(max_iter) + 1):
        mmat = assemble_m_of_lambda(sys, kappa)
        if index is None:
            # index-less seed: lock onto the positive mode closest to it
            count = min(8, sys.ndof)
            thetas, vecs = _pencil_positive_modes(sys.A, mmat, count, v0=vec, ainv=ainv)
            if thetas[-1] < kappa and count < sys.ndof:
                count = min(2 * count, sys.ndof)
                thetas, vecs = _pencil_positive_modes(sys.A, mmat, count, v0=vec, ainv=ainv)
            index = int(np.argmin(np.abs(thetas - kappa))) + 1
            theta, vec = thetas[index - 1], vecs[:, index - 1]
        else:
            thetas, vecs = _pencil_positive_modes(sys.A, mmat, index, v0=vec, ainv=ainv)
            theta, vec = thetas[index - 1], vecs[:, index - 1]
        resid = theta - kappa
        defect = abs(resid) / abs(theta)
        history.append(theta)
        if defect <= rel_tol:
            lam = theta
            anorm = np.linalg.norm(sys.A @ vec)
            mres = assemble_m_of_lambda(sys, lam)
            res = np.linalg.norm(sys.A @ vec - lam * (mres @ vec))
            if res > _RESIDUAL_TOL * anorm:
                raise EigenSolveError(
                    "converged pair fails the nonlinear residual check "
                    "(%.2e vs %.2e)" % (res, _RESIDUAL_TOL * anorm)
                )
            return EigenPair(lam, vec, iteration, defect, history)

        # bracket update: F decreasing, so F > 0 puts the root above kappa
        if resid > 0:
            lo = max(lo, kappa)
        else:
            hi = kappa if hi is None else min(hi, kappa)

        if prev is None or prev[1] == resid:
            nxt = theta  # plain fixed-point step
        else:
            k0, f0 = prev
            nxt = kappa - resid * (kappa - k0) / (resid - f0)
        prev = (kappa, resid)
        if hi is not None and not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        elif hi is None and not nxt > lo:
            nxt = 0.5 * (lo + min(kappa, lam_cap))
        if lo >= lam_cap * (1.0 - 1e-12):
            raise EigenSolveError(
                "eigenvalue tracked from seed %.6g lies beyond the first "
                "resolvent resonance %.6g; the condensed problem cannot "
                "represent it on this mesh" % (lam, lam_cap)
            )
        kappa = min(nxt, lam_cap)

    raise ConvergenceError(
        "nonlinear eigenvalue iteration did not reach rel_tol=%.1e within "
        "%d iterations" % (rel_tol, max_iter),
        history=history,
    )


def oracle_full_eig(mesh, spaces, tau, mat=None, m=6, size_guard=2000, threads=1):
    """Spectrum of the full problem via the discrete solution operator.

    Builds the operator's matrix in the broken scalar basis by solving
    one condensed source problem per basis function, then diagonalizes
    it.  Intended for coarse meshes; guarded by ``size_guard`` on the
    scalar-space dimension.
    """
    mat = mat or MaterialSpec.identity()
    sys = assemble_condensed(mesh, spaces, tau, mat)
    num_t = len(mesh.triangles)
    n_w = sys.n_w
    n_total = num_t * n_w
    if n_total > size_guard:
        raise EigenSolveError(
            "oracle dimension %d exceeds the size guard %d; use a coarser "
            "mesh level" % (n_total, size_guard)
        )
    lu = sys.factorized()

    def column(col):
        elem, i = divmod(col, n_w)
        fmom = np.zeros((num_t, n_w))
        fmom[elem, i] = 1.0
        b_loc = sys.elem_signs[elem] * sys.classes[sys.elem_class[elem]].umat[i, :]
        b = np.zeros(sys.ndof)
        mask = sys.elem_dofs[elem] >= 0
        np.add.at(b, sys.elem_dofs[elem][mask], b_loc[mask])
        eta = lu.solve(b)
        u, _ = recover_source_fields(sys, eta, fmom)
        return u.ravel()

    tmat = np.empty((n_total, n_total))
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            for col, data in enumerate(pool.map(column, range(n_total))):
                tmat[:, col] = data
    else:
        for col in range(n_total):
            tmat[:, col] = column(col)

    sym_defect = np.abs(tmat - tmat.T).max() / max(np.abs(tmat).max(), 1e-300)
    if sym_defect > 1e-10:
        raise EigenSolveError(
            "solution operator matrix not symmetric (defect %.2e)" % sym_defect
        )
    mu = scipy.linalg.eigvalsh(0.5 * (tmat + tmat.T))
    if mu.min() <= 0:
        raise EigenSolveError("solution operator is not positive definite")
    values = np.sort(1.0 / mu)[: int(m)]
    return OracleSpectrum(values, tmat)
