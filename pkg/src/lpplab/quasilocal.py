"""Gaussian-filtered quasi-projectors and localized sector transport.

The construction chain:

  1. choose_filter_params fixes (alpha, T) from (g, mu, C_mu, ||Phi||'_mu,
     v, l) so that the three exponents g^2/4a, aT^2, mu(l - vT) coincide
     at mu g l / (g + 4 C_mu ||Phi||'_mu) = l / xi.
  2. solve_filter_coefficients interpolates a_lambda so the filtered sum
     P_script = sum a_lambda P_lambda acts as the identity on sigma_in.
  3. build_R evaluates the truncated time integral

        R_i = sum_lambda a_lambda sqrt(a/pi) int_{-T}^{T} dt e^{-a t^2}
              e^{it(lambda_i0 - lambda)} e^{itH} e^{-itH0}

     by adaptive composite Gauss-Legendre quadrature in the shared
     eigenbasis pair, with the zeroth Dyson term carried at its full
     (untruncated) value: the |t| >= T remainder of that scalar term
     belongs to R^{<=T}, which is what makes the eps = 0 step exact.
  4. localize_R takes the normalized partial trace onto K_l.
  5. path_transport iterates localized steps through the coefficient
     recursion L^(m) = c(m) R^(m) L^(m-1) entirely on H_{K_l}.

Everything here works on explicit spectral data; no contour integrals.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from . import kernels, lattice
from .exceptions import GapClosed, QuadratureError, StepTooLarge
from .operators import (
    LocalOperator,
    embed_matrix,
    operator_norm,
    partial_trace_localize,
)
from .sectors import align_phases, solve_step_coefficients, verify_gap_along_path

CLUSTER_TOL = 1e-9
QUAD_TOL = 1e-10
MAX_PANELS = 1 << 13
STEP_CAP = 10_000


# ------------------------------------------------------------ parameters


@dataclass(frozen=True)
class FilterParams:
    """Gaussian filter data for one localization radius l."""

    alpha: float
    T: float
    l: float
    mu_prime: float
    exponent: float  # the common value of the three equalities
    nodes: np.ndarray | None = None
    a: np.ndarray | None = None

    def with_coefficients(self, nodes, a):
        return replace(self, nodes=np.asarray(nodes, float), a=np.asarray(a, float))


def choose_filter_params(g, mu, c_mu, phi_prime_norm, v, l) -> FilterParams:
    """(alpha, T) balancing the three error exponents; validates the equalities."""
    if l <= 0:
        raise ValueError("localization radius l must be positive")
    if v <= 0:
        raise ValueError("zero velocity: no dynamics to localize against")
    if min(g, mu, c_mu, phi_prime_norm) <= 0:
        raise ValueError("g, mu, C_mu, ||Phi||'_mu must all be positive")
    x = c_mu * phi_prime_norm
    alpha = g * (g + 4 * x) / (4 * mu * l)
    T = 4 * x * l / ((g + 4 * x) * v)
    exponent = mu * g * l / (g + 4 * x)
    e1 = g * g / (4 * alpha)
    e2 = alpha * T * T
    e3 = mu * (l - v * T)
    worst = max(abs(e - exponent) for e in (e1, e2, e3))
    if worst > 1e-12 * max(exponent, 1.0):
        raise ValueError(
            "three-equalities check failed; the supplied v is inconsistent "
            "with 2 C_mu ||Phi||'_mu / mu"
        )
    return FilterParams(
        alpha=alpha, T=T, l=l, mu_prime=exponent / l, exponent=exponent
    )


def solve_filter_coefficients(sigma_in, alpha):
    """Interpolation weights a_lambda with sum_l a_l e^{-(k-l)^2/4a} = 1.

    Eigenvalues closer than 1e-9 are merged to one node (the filter
    weight depends only on the eigenvalue).  Returns (nodes, a, info).
    """
    vals = np.sort(np.asarray(sigma_in, dtype=float))
    nodes = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or vals[i] - vals[i - 1] > CLUSTER_TOL:
            nodes.append(vals[start:i].mean())
            start = i
    nodes = np.array(nodes)
    diff = nodes[:, None] - nodes[None, :]
    M = np.exp(-(diff**2) / (4 * alpha))
    ev = np.linalg.eigvalsh(M)
    cond = float(ev.max() / ev.min()) if ev.min() > 0 else np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError(
            f"filter node system is numerically singular (cond {cond:.2e}); "
            "use a smaller alpha (larger l)"
        )
    a = np.linalg.solve(M, np.ones(len(nodes)))
    warns = ()
    if (a <= 0).any() or (a >= 1 + 1e-12).any():
        warns = (f"filter coefficients outside (0,1): {a}",)
    return nodes, a, {"cond": cond, "warnings": warns}


# ------------------------------------------------------ quadrature engine


def _opnorm_estimate(M, iters=12):
    """Power-iteration estimate of the spectral norm (deterministic start)."""
    D = M.shape[-1]
    v = 1.0 + np.arange(D) / (2.0 * D)
    v = v.astype(complex) / np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = M @ v
        est = np.linalg.norm(w)
        if est == 0.0:
            return 0.0
        v = M.conj().T @ w
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return est
        v /= nv
    return float(est)


def _stack_norm_estimate(stack):
    return max(_opnorm_estimate(M) for M in stack)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def _composite_nodes(T, panels):
    edges = np.linspace(-T, T, panels + 1)
    half = (edges[1] - edges[0]) / 2
    mids = (edges[:-1] + edges[1:]) / 2
    t = (mids[:, None] + half * _GL_NODES[None, :]).ravel()
    q = np.broadcast_to(half * _GL_WEIGHTS[None, :], (panels, 12)).ravel()
    return t, q


def _refine(apply_fn, T, measure, tol=QUAD_TOL, start_panels=2):
    """Panel-doubling until successive evaluations differ by < tol."""
    prev = None
    panels = start_panels
    while panels <= MAX_PANELS:
        cur = apply_fn(*_composite_nodes(T, panels))
        if prev is not None and measure(cur, prev) < tol:
            return cur, panels
        prev = cur
        panels *= 2
    raise QuadratureError(
        f"time-integral quadrature did not converge within {MAX_PANELS} panels"
    )


def _gauss_truncated(omega, alpha, T):
    """sqrt(a/pi) int_{-T}^{T} e^{-a t^2} e^{i omega t} dt, closed form."""
    omega = np.asarray(omega, dtype=float)
    expo = omega**2 / (4 * alpha)
    out = np.zeros_like(omega)
    ok = expo < 500  # beyond that both the full and truncated values vanish
    z = np.sqrt(alpha) * T + 1j * omega[ok] / (2 * np.sqrt(alpha))
    out[ok] = np.exp(-expo[ok]) * np.real(erf(z))
    return out


def gaussian_filtered_projector(S, lam, alpha, method="spectral", tail=1e-16):
    """P_lambda = sum_kappa e^{-(kappa-lam)^2/4a} Q_kappa.

    method="spectral" evaluates the Gaussian weights directly;
    method="quadrature" integrates sqrt(a/pi) e^{-a t^2} e^{it(H-lam)}
    over a window wide enough that the discarded tail is below `tail`,
    using the same panel-doubling engine as build_R.
    """
    S.require_complete("gaussian_filtered_projector")
    kappa = S.values
    if method == "spectral":
        w = np.exp(-((kappa - lam) ** 2) / (4 * alpha))
    elif method == "quadrature":
        T_inf = np.sqrt(np.log(1.0 / tail) / alpha)
        pref = np.sqrt(alpha / np.pi)

        def apply_fn(t, q):
            phases = np.exp(1j * np.outer(t, kappa - lam))
            return pref * ((q * np.exp(-alpha * t * t)) @ phases)

        w, _ = _refine(apply_fn, T_inf, lambda a, b: np.abs(a - b).max())
        w = w.real
    else:
        raise ValueError(f"unknown method {method!r}")
    return (S.vectors * w) @ S.vectors.conj().T


# ------------------------------------------------------------- build_R


def _build_R_batch(S0, S, lam0s, params: FilterParams, overlap=None):
    """R_i^{<=T} for several sector eigenvalues lambda_i0 in one sweep.

    Returns (stack, diagnostics).  The zeroth Dyson term is included at
    its full-time value: the quadrature handles the |t| <= T product
    integral, and the same-node scalar part is replaced by the analytic
    untruncated Gaussian (see module docstring).
    """
    if params.nodes is None or params.a is None:
        raise ValueError("filter coefficients not solved; call with_coefficients")
    S0.require_complete("build_R")
    S.require_complete("build_R")
    lam0s = np.asarray(lam0s, dtype=float)
    alpha, T = params.alpha, params.T
    nodes, a = params.nodes, params.a
    pref = np.sqrt(alpha / np.pi)
    C = overlap if overlap is not None else S.vectors.conj().T @ S0.vectors
    kap, kap0 = S.values, S0.values
    n_i, D = len(lam0s), C.shape[0]

    def apply_fn(t, q):
        acc = np.zeros((n_i, D, D), dtype=complex)
        scal = np.zeros(n_i, dtype=complex)
        gauss = q * np.exp(-alpha * t * t)
        for k in range(len(t)):
            tk = t[k]
            # w_i(t) = e^{it lam_i0} sum_lambda a_lambda e^{-it lambda}
            w = np.exp(1j * tk * lam0s) * np.sum(a * np.exp(-1j * tk * nodes))
            mid = (np.exp(1j * tk * kap)[:, None] * C) * np.exp(-1j * tk * kap0)[None, :]
            acc += (gauss[k] * w)[:, None, None] * mid[None, :, :]
            scal += gauss[k] * w
        return pref * acc, pref * scal

    def measure(cur, prev):
        return _stack_norm_estimate(cur[0] - prev[0])

    (acc, scal_quad), panels = _refine(apply_fn, T, measure)

    # full-time value of the zeroth Dyson term, per i
    scal_full = np.array(
        [np.sum(a * np.exp(-((lam0 - nodes) ** 2) / (4 * alpha))) for lam0 in lam0s]
    )
    comp = scal_full - scal_quad
    stack = np.einsum("ab,ibc->iac", S.vectors, acc) @ S0.vectors.conj().T
    stack += comp[:, None, None] * np.eye(D)[None, :, :]

    norms = [_opnorm_estimate(M) for M in stack]
    diag = {
        "panels": panels,
        "sum_a": float(a.sum()),
        "norms": norms,
        "tail_compensation": comp,
    }
    return stack, diag


def build_R(S0, S, lam0, params: FilterParams, overlap=None):
    """Single-eigenvalue wrapper around the batched evaluation."""
    stack, diag = _build_R_batch(S0, S, [lam0], params, overlap=overlap)
    diag["norm"] = diag.pop("norms")[0]
    diag["tail_compensation"] = complex(diag["tail_compensation"][0])
    return stack[0], diag


def localize_R(R, K, l, G) -> LocalOperator:
    """Normalized partial trace of R onto the l-fattening of K."""
    return partial_trace_localize(R, lattice.fatten(G, K, l), G)


# ------------------------------------------------------------- weak step


def _step_gap(path, s0, s1):
    gaps = [path.sector(s0).gap, path.sector(s1).gap]
    vals = path.sector_values((s0 + s1) / 2)
    if path.rule[0] == "fixed_d":
        d = int(path.rule[1])
        gaps.append(float(vals[d] - vals[d - 1]))
    else:
        lo, hi = float(path.rule[1]), float(path.rule[2])
        mask = (vals >= lo) & (vals <= hi)
        if not mask.any() or mask.all():
            raise GapClosed((s0 + s1) / 2, None)
        gaps.append(float(np.abs(vals[~mask][:, None] - vals[mask][None, :]).min()))
    g = min(gaps)
    if g < 1e-10:
        raise GapClosed((s0 + s1) / 2, g)
    return g


def weak_step(path, s0, eps, l, g=None):
    """Localized single-step transformations R_i^l and their errors.

    l may be a scalar or a sequence (the sweep shares all spectral
    work).  Returns a dict with per-l LocalOperators, localized errors
    ||(P(s0+eps) - R_i^l) psi_i(s0)||, unlocalized errors, filter
    parameters, and solver warnings.
    """
    ls = np.atleast_1d(np.asarray(l))
    consts = path.constants()
    if g is None:
        g = _step_gap(path, s0, s0 + eps)
    sec0 = path.sector(s0)
    sec1 = path.sector(s0 + eps)
    S0, S1 = path.spectral(s0), path.spectral(s0 + eps)
    C = S1.vectors.conj().T @ S0.vectors
    K = path.K
    G = path.graph
    psi0 = sec0.basis
    # P(s0+eps) psi_i(s0), shared across the l-sweep
    proj0 = sec1.basis @ (sec1.basis.conj().T @ psi0)

    out = {"l": [], "R": [], "errors": [], "unlocalized_errors": [], "params": [],
           "warnings": [], "gap": g}
    for lv in ls:
        params = choose_filter_params(
            g, consts["mu"], consts["c_mu"], consts["phi_prime_norm"], consts["v"], lv
        )
        nodes, a, info = solve_filter_coefficients(sec1.values_in, params.alpha)
        params = params.with_coefficients(nodes, a)
        stack, diag = _build_R_batch(S0, S1, sec0.values_in, params, overlap=C)
        Kl = tuple(sorted(lattice.fatten(G, K, lv)))
        plan = kernels.EmbeddingPlan(G.site_dims, Kl)
        ops, errs, raw_errs = [], [], []
        for i in range(sec0.dim):
            R_loc = partial_trace_localize(stack[i], Kl, G)
            approx = kernels.apply_embedded(R_loc.matrix, plan, psi0[:, i])
            errs.append(float(np.linalg.norm(proj0[:, i] - approx)))
            raw_errs.append(float(np.linalg.norm(proj0[:, i] - stack[i] @ psi0[:, i])))
            ops.append(R_loc)
        out["l"].append(float(lv))
        out["R"].append(ops)
        out["errors"].append(errs)
        out["unlocalized_errors"].append(raw_errs)
        out["params"].append(params)
        out["warnings"].extend(info["warnings"])
    if np.ndim(l) == 0:
        for key in ("l", "R", "errors", "unlocalized_errors", "params"):
            out[key] = out[key][0]
    return out


# ---------------------------------------------------------- path transport


@dataclass
class TransportSet:
    """Iterated localized transport L_ij^l over an n-step path."""

    L: np.ndarray  # (d, d, DK, DK) matrices on H_{K_l}
    support: tuple
    dims: tuple
    n: int
    l: float
    c_history: list
    errors: np.ndarray
    warnings: tuple
    gap: float

    @property
    def dim(self):
        return self.L.shape[0]

    def operator(self, i, j) -> LocalOperator:
        return LocalOperator(self.support, self.dims, self.L[i, j])


class _PredicateFailure(Exception):
    pass


def _transport_attempt(path, n, ls, g, consts):
    G = path.graph
    K = path.K
    d = path.sector(0.0).dim
    ss = np.linspace(0.0, 1.0, n + 1)

    regions = {}
    plans = {}
    L = {}
    for lv in ls:
        Kl = tuple(sorted(lattice.fatten(G, K, lv)))
        regions[lv] = Kl
        dims = tuple(G.site_dims[x] for x in Kl)
        DK = int(np.prod(dims, dtype=np.int64))
        plans[lv] = (dims, kernels.EmbeddingPlan(G.site_dims, Kl))
        eye = np.eye(DK, dtype=complex)
        L[lv] = np.array(
            [[eye if i == j else np.zeros((DK, DK), complex) for j in range(d)]
             for i in range(d)]
        )

    sec_prev = path.sector(0.0)
    c_history = []
    warnings = []
    for m in range(1, n + 1):
        s_prev, s_next = ss[m - 1], ss[m]
        try:
            sec_next = align_phases(sec_prev, path.sector(s_next))
            c, info = solve_step_coefficients(sec_prev, sec_next)
        except StepTooLarge as exc:
            raise _PredicateFailure(str(exc))
        if info["violations"]:
            raise _PredicateFailure(
                f"step {m}: {info['violations']} coefficient rows exceed 2 sqrt(D)"
            )
        c_history.append(c)

        S_prev, S_next = path.spectral(s_prev), path.spectral(s_next)
        C = S_next.vectors.conj().T @ S_prev.vectors
        for lv in ls:
            params = choose_filter_params(
                g, consts["mu"], consts["c_mu"], consts["phi_prime_norm"],
                consts["v"], lv,
            )
            nodes, a, info_f = solve_filter_coefficients(sec_next.values_in, params.alpha)
            warnings.extend(info_f["warnings"])
            params = params.with_coefficients(nodes, a)
            stack, _ = _build_R_batch(S_prev, S_next, sec_prev.values_in, params, overlap=C)
            R_small = np.array(
                [partial_trace_localize(stack[j], regions[lv], G).matrix for j in range(d)]
            )
            old = L[lv]
            # recursion: L^(m)_{ij} = sum_p c_{ip} R_p L^(m-1)_{pj}
            RL = np.einsum("pab,pqbc->pqac", R_small, old)
            L[lv] = np.einsum("ip,pqac->iqac", c, RL)
        sec_prev = sec_next

    # endpoint reconstruction errors
    psi0 = path.sector(0.0).basis
    psi1 = sec_prev.basis
    errors = {}
    for lv in ls:
        dims, plan = plans[lv]
        errs = []
        for i in range(d):
            acc = np.zeros(psi1.shape[0], dtype=complex)
            for j in range(d):
                acc += kernels.apply_embedded(L[lv][i, j], plan, psi0[:, j])
            errs.append(float(np.linalg.norm(psi1[:, i] - acc)))
        errors[lv] = np.array(errs)

    out = {}
    for lv in ls:
        dims, _ = plans[lv]
        out[lv] = TransportSet(
            L=L[lv],
            support=regions[lv],
            dims=dims,
            n=n,
            l=float(lv),
            c_history=c_history,
            errors=errors[lv],
            warnings=tuple(warnings),
            gap=g,
        )
    return out


def transport_sweep(path, n, ls, n_check=None):
    """path_transport over a shared l-grid with adaptive step count."""
    ls = [float(v) for v in np.atleast_1d(ls)]
    consts = path.constants()
    if n_check is None:
        n_check = max(9, min(n + 1, 33))
    g, _ = verify_gap_along_path(path, n_check=n_check)
    attempt = n
    while attempt <= STEP_CAP:
        try:
            return _transport_attempt(path, attempt, ls, g, consts)
        except _PredicateFailure:
            attempt *= 2
    raise StepTooLarge(f"step predicates still failing at n={STEP_CAP}")


def path_transport(path, n, l) -> TransportSet:
    """Iterated transport at a single radius l."""
    return transport_sweep(path, n, [l])[float(l)]


# -------------------------------------------------------- impurity form


def _check_product_sector(basis, G, site, impurity_dim):
    """Every sector column must be (same bulk vector) x (impurity vector)."""
    dims = list(G.site_dims)
    n = len(dims)
    d_site = dims[site]
    d0 = d_site // impurity_dim
    shape = dims[:site] + [d0, impurity_dim] + dims[site + 1 :]
    bulk = None
    for i in range(basis.shape[1]):
        tens = basis[:, i].reshape(shape)
        # impurity axis is at position site+1; move it last
        mat = np.moveaxis(tens, site + 1, -1).reshape(-1, impurity_dim)
        U, s, Vh = np.linalg.svd(mat, full_matrices=False)
        if len(s) > 1 and s[1] > 1e-8:
            raise ValueError(
                f"unperturbed sector vector {i} is not a product with the "
                f"impurity factor (second singular value {s[1]:.2e})"
            )
        if bulk is None:
            bulk = U[:, 0]
        else:
            if 1.0 - abs(np.vdot(bulk, U[:, 0])) > 1e-8:
                raise ValueError("sector vectors do not share one bulk factor")


def impurity_transform(path, ts: TransportSet, site, impurity_dim, impurity_basis=None):
    """T_l = sum_ij L_ij I_ji on H_{K_l}, and the projector mismatch.

    The printed error in the source statement is || P' - T^dagger P T ||
    with T mapping the perturbed basis; with our L (which transports the
    s=0 basis forward) the transforming operator is the adjoint of that
    printed T, so the mismatch computed here is || P' - T_l P T_l^dagger ||.
    """
    G = path.graph
    site = int(site)
    if site not in ts.support:
        raise ValueError("impurity site must lie inside the transport region")
    d_site = G.site_dims[site]
    if d_site % impurity_dim:
        raise ValueError("impurity dimension does not divide the site dimension")
    d0 = d_site // impurity_dim
    d = ts.dim
    if impurity_basis is None:
        impurity_basis = np.eye(impurity_dim, dtype=complex)
    phi = np.asarray(impurity_basis, dtype=complex)
    if phi.shape != (impurity_dim, impurity_dim):
        raise ValueError("impurity basis must be square on the impurity factor")
    if d != impurity_dim:
        raise ValueError("sector dimension must equal the impurity dimension")

    sec0 = path.sector(0.0)
    _check_product_sector(sec0.basis, G, site, impurity_dim)

    pos = ts.support.index(site)
    dims = list(ts.dims)
    T_small = np.zeros((int(np.prod(dims)),) * 2, dtype=complex)
    for i in range(d):
        for j in range(d):
            # |phi_j><phi_i| on the impurity factor, identity on the rest
            ketbra = np.outer(phi[:, j], phi[:, i].conj())
            on_site = np.kron(np.eye(d0, dtype=complex), ketbra)
            I_ji = embed_matrix(on_site, (pos,), dims)
            T_small += ts.L[i, j] @ I_ji

    T_full = embed_matrix(T_small, ts.support, G.site_dims)
    P0 = sec0.projector
    P1 = path.sector(1.0).projector
    err = operator_norm(P1 - T_full @ P0 @ T_full.conj().T)
    op = LocalOperator(ts.support, ts.dims, T_small)
    return op, float(err), {"l": ts.l, "n": ts.n}
