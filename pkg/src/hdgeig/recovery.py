"""Recovery of eigenfunction fields and element-local postprocessing.

From a converged trace eigenpair the scalar and flux fields are
recovered through the local lifts, normalized to unit L2 norm with a
deterministic sign.  Two local postprocessing steps follow: a
degree-(k+1) scalar reconstruction driven by the recovered flux (one
extra order of accuracy for k >= 1), and a normal-continuous flux
reconstruction in the Raviart-Thomas-type space whose edge data is the
numerical flux.  A Rayleigh-quotient-like formula combines both into a
superconvergent eigenvalue.

The module also provides residual diagnostics that re-integrate the
discretized equations against the full test bases, independently of the
lift matrices used to compute the fields.

Index convention in contractions: e = element, q = volume quadrature
point, g = edge quadrature point, i/j/m = basis members, d/a/b = space
dimensions.
"""

import numpy as np
import scipy.linalg

from .assembly import load_moments
from .errors import EigenSolveError, NumericalError

__all__ = [
    "RecoveredFields",
    "PostprocessedFields",
    "recover_fields",
    "postprocess_u",
    "postprocess_q",
    "rayleigh_eigenvalue",
    "postprocess",
    "eig_residuals",
    "source_residuals",
    "qstar_normal_jumps",
]

#: sign anchor: the recovered eigenfunction has positive element mean here
_ANCHORS = {"square": (np.pi / 2 - 1e-2, np.pi / 2 - 1e-2), "lshape": (0.5, 0.5)}


class RecoveredFields:
    """Recovered eigenfields, unit L2 norm, deterministic sign."""

    def __init__(self, value, eta, u, q, anchor_element, sign):
        self.value = float(value)
        self.eta = eta
        self.u = u
        self.q = q
        self.anchor_element = int(anchor_element)
        self.sign = float(sign)

    @property
    def norm_u(self):
        return float(np.sqrt(np.sum(self.u**2)))


class PostprocessedFields:
    """Locally postprocessed scalar, flux, and eigenvalue."""

    def __init__(self, u_star, q_star, value_star):
        self.u_star = u_star
        self.q_star = q_star
        self.value_star = float(value_star)


def recover_fields(sys, pair):
    """Recover (u, q) from a converged trace eigenpair and normalize.

    u is the resolvent-corrected trace lift of eta; q adds the scaled
    load lift of u to the flux lift of eta.  All three are rescaled so
    that u has unit L2 norm, with the sign fixed by the element mean at
    the domain's anchor point.
    """
    lam = pair.value
    eta_loc = sys.local_trace(pair.vector)
    num_t = len(sys.mesh.triangles)
    u = np.empty((num_t, sys.n_w))
    q = np.empty((num_t, sys.n_v))
    for ci, ops in enumerate(sys.classes):
        members = sys._class_members[ci]
        if members.size == 0:
            continue
        loc = eta_loc[members]
        ueta = ops.resolvent(lam, ops.umat @ loc.T).T
        u[members] = ueta
        q[members] = loc @ ops.qmat.T + lam * (ueta @ ops.qwmat.T)

    norm = np.sqrt(np.sum(u**2))
    if norm < 1e-300:
        raise EigenSolveError("degenerate eigenfield: recovered u is zero")

    anchor = _ANCHORS.get(sys.mesh.domain)
    anchor_elem = 0 if anchor is None else sys.mesh.locate(anchor)
    ops = sys.classes[sys.elem_class[anchor_elem]]
    mean = ops.w_means @ u[anchor_elem]
    if mean == 0.0:
        flat = u.ravel()
        mean = flat[np.flatnonzero(flat)[0]]
    sign = 1.0 if mean > 0 else -1.0
    scale = sign / norm
    return RecoveredFields(
        lam, pair.vector * scale, u * scale, q * scale, anchor_elem, sign
    )


def postprocess_u(sys, fields):
    """Element-by-element degree-(k+1) scalar reconstruction.

    On each element the reconstruction matches the weak gradient of the
    recovered flux and keeps the element mean of the recovered scalar;
    the mean constraint closes the local Neumann problem.
    """
    num_t = len(sys.mesh.triangles)
    n_p = sys.ref.n_p
    c = sys.mat.c
    out = np.empty((num_t, n_p))
    for ci, ops in enumerate(sys.classes):
        members = sys._class_members[ci]
        if members.size == 0:
            continue
        pops = ops.p_ops
        qvals = np.einsum("qid,ei->eqd", ops.v_vals, fields.q[members])
        cq = qvals @ c.T
        rhs_grad = -np.einsum("q,eqd,qjd->ej", ops.wq, cq, pops["grads"])
        means = fields.u[members] @ ops.w_means
        rhs = np.concatenate([rhs_grad, means[:, None]], axis=1)
        sol = scipy.linalg.lu_solve(pops["lu"], rhs.T).T
        out[members] = sol[:, :n_p]
    return out


def _numerical_flux_trace(ops, eta_face, u, q, face):
    """Branch values (e, g) of the numerical flux normal trace on a face."""
    qn = np.einsum("ei,gi->eg", q, ops.v_normal[face])
    uvals = np.einsum("ei,gi->eg", u, ops.w_face[face])
    etav = np.einsum("em,gm->eg", eta_face, ops.t_face[face])
    return qn + ops.tau[face] * (uvals - etav)


def postprocess_q(sys, fields):
    """Normal-continuous flux reconstruction in [P_k]^2 + x P_k.

    Edge moments match the numerical flux branch values (single-valued
    across interior edges by construction of the method); for k >= 1,
    interior moments match the recovered flux against degree-(k-1)
    vector polynomials.
    """
    num_t = len(sys.mesh.triangles)
    ref = sys.ref
    n_m = ref.n_m
    eta_loc = sys.local_trace(fields.eta)
    out = np.empty((num_t, ref.n_rt))
    for ci, ops in enumerate(sys.classes):
        members = sys._class_members[ci]
        if members.size == 0:
            continue
        rt = ops.rt_ops
        rows = []
        for l in range(3):
            eta_face = eta_loc[members][:, l * n_m : (l + 1) * n_m]
            qhat = _numerical_flux_trace(ops, eta_face, fields.u[members],
                                         fields.q[members], l)
            rows.append(np.einsum("g,eg,gm->em", ops.face_wq[l], qhat, ops.t_face[l]))
        if ref.spaces.k >= 1:
            ivals = rt["i_vals"]
            qvals = np.einsum("qid,ei->eqd", ops.v_vals, fields.q[members])
            rows.append(np.einsum("q,eq,qi->ei", ops.wq, qvals[:, :, 0], ivals))
            rows.append(np.einsum("q,eq,qi->ei", ops.wq, qvals[:, :, 1], ivals))
        rhs = np.concatenate(rows, axis=1)
        sol = scipy.linalg.lu_solve(rt["lu"], rhs.T).T
        out[members] = sol
    return out


def rayleigh_eigenvalue(sys, u_star, q_star):
    """Rayleigh-quotient-like eigenvalue from the postprocessed fields.

    Numerator: broken energy of the scalar reconstruction plus the
    element-boundary pairing of the reconstructed normal flux with the
    scalar branch values; denominator: L2 norm of the reconstruction.
    """
    alpha = sys.mat.alpha
    num = 0.0
    den = 0.0
    for ci, ops in enumerate(sys.classes):
        members = sys._class_members[ci]
        if members.size == 0:
            continue
        pops = ops.p_ops
        rt = ops.rt_ops
        grads = np.einsum("qja,ej->eqa", pops["grads"], u_star[members])
        num += np.einsum("q,eqa,ab,eqb->", ops.wq, grads, alpha, grads)
        vals = np.einsum("qj,ej->eq", pops["vals"], u_star[members])
        den += np.einsum("q,eq,eq->", ops.wq, vals, vals)
        for l in range(3):
            qn = np.einsum("ei,gi->eg", q_star[members], rt["face_normal"][l])
            uv = np.einsum("ej,gj->eg", u_star[members], pops["face"][l])
            num += np.einsum("g,eg->", ops.face_wq[l], qn * uv)
    if den <= 0:
        raise NumericalError("postprocessed field has zero norm")
    return num / den


def postprocess(sys, fields):
    """Run both local reconstructions and the eigenvalue formula."""
    u_star = postprocess_u(sys, fields)
    q_star = postprocess_q(sys, fields)
    return PostprocessedFields(u_star, q_star, rayleigh_eigenvalue(sys, u_star, q_star))


# --- residual diagnostics -------------------------------------------------


def _system_residuals(sys, eta_loc, u, q, rhs_mom):
    """Re-integrate the three discrete equations against full test bases.

    Returns relative residuals keyed by equation: 'flux' for the
    constitutive equation, 'balance' for the elementwise flux balance,
    and 'continuity' for single-valuedness of the numerical flux moments
    on interior edges.
    """
    mesh = sys.mesh
    n_m = sys.ref.n_m
    c = sys.mat.c

    res_a = []
    res_b = []
    mag_a = np.zeros(3)
    mag_b = np.zeros(3)
    cont = np.zeros((mesh.num_edges, n_m))
    cont_mag = np.zeros((mesh.num_edges, n_m))

    for ci, ops in enumerate(sys.classes):
        members = sys._class_members[ci]
        if members.size == 0:
            continue
        qvals = np.einsum("qid,ei->eqd", ops.v_vals, q[members])
        uvals = np.einsum("qi,ei->eq", ops.w_vals, u[members])
        rhsvals = np.einsum("qi,ei->eq", ops.w_vals, rhs_mom[members])
        cq = qvals @ c.T

        t1 = np.einsum("q,eqd,qid->ei", ops.wq, cq, ops.v_vals)
        t2 = np.einsum("q,eq,qi->ei", ops.wq, uvals, ops.v_divs)
        t3 = np.zeros_like(t1)
        t4 = np.einsum("q,eqd,qid->ei", ops.wq, qvals, ops.w_grads)
        t5 = np.zeros_like(t4)
        t6 = np.einsum("q,eq,qi->ei", ops.wq, rhsvals, ops.w_vals)
        for l in range(3):
            fw = ops.face_wq[l]
            sl = slice(l * n_m, (l + 1) * n_m)
            eta_face = eta_loc[members][:, sl]
            etav = np.einsum("em,gm->eg", eta_face, ops.t_face[l])
            t3 += np.einsum("g,eg,gi->ei", fw, etav, ops.v_normal[l])
            qhat = _numerical_flux_trace(ops, eta_face, u[members], q[members], l)
            t5 += np.einsum("g,eg,gi->ei", fw, qhat, ops.w_face[l])
            moments = np.einsum("g,eg,gm->em", fw, qhat, ops.t_face[l])
            signs = sys.elem_signs[members][:, sl]
            edges = mesh.elem_edges[members, l]
            np.add.at(cont, edges, moments * signs)
            np.add.at(cont_mag, edges, np.abs(moments))
        res_a.append(t1 - t2 + t3)
        res_b.append(-t4 + t5 - t6)
        mag_a += [np.linalg.norm(t1), np.linalg.norm(t2), np.linalg.norm(t3)]
        mag_b += [np.linalg.norm(t4), np.linalg.norm(t5), np.linalg.norm(t6)]

    scale_a = max(mag_a.max(), 1e-300)
    scale_b = max(mag_b.max(), 1e-300)
    interior = ~mesh.boundary
    scale_c = max(cont_mag[interior].max(), 1e-300)
    return {
        "flux": float(np.linalg.norm(np.concatenate(res_a, axis=None)) / scale_a),
        "balance": float(np.linalg.norm(np.concatenate(res_b, axis=None)) / scale_b),
        "continuity": float(np.abs(cont[interior]).max() / scale_c),
    }


def eig_residuals(sys, fields):
    """Relative residuals of the recovered eigen-triple in the discrete
    eigenproblem (right-hand side lambda * u)."""
    eta_loc = sys.local_trace(fields.eta)
    rhs_mom = fields.value * fields.u
    return _system_residuals(sys, eta_loc, fields.u, fields.q, rhs_mom)


def source_residuals(sys, eta, u, q, f):
    """Relative residuals of a recovered source-problem triple."""
    eta_loc = sys.local_trace(eta)
    rhs_mom = load_moments(sys, f)
    return _system_residuals(sys, eta_loc, u, q, rhs_mom)


def qstar_normal_jumps(sys, q_star):
    """Largest interior-edge moment jump of the reconstructed normal flux,
    scaled by the overall moment magnitude."""
    mesh = sys.mesh
    n_m = sys.ref.n_m
    jumps = np.zeros((mesh.num_edges, n_m))
    mags = np.zeros((mesh.num_edges, n_m))
    for ci, ops in enumerate(sys.classes):
        members = sys._class_members[ci]
        if members.size == 0:
            continue
        rt = ops.rt_ops
        for l in range(3):
            qn = np.einsum("ei,gi->eg", q_star[members], rt["face_normal"][l])
            moments = np.einsum("g,eg,gm->em", ops.face_wq[l], qn, ops.t_face[l])
            signs = sys.elem_signs[members][:, l * n_m : (l + 1) * n_m]
            edges = mesh.elem_edges[members, l]
            np.add.at(jumps, edges, moments * signs)
            np.add.at(mags, edges, np.abs(moments))
    interior = ~mesh.boundary
    return float(np.abs(jumps[interior]).max() / max(mags[interior].max(), 1e-300))
