"""Exponentially local spectral flow for impurity couplings.

The xy model with an impurity conserves particle number, so everything
happens inside fixed-number blocks of hard-core configurations on the
bulk sites plus the impurity modes.  Per block the flow is generated by
G = i[P, dP]; truncating G to configurations with all particles near
the coupling region gives a strictly local unitary whose defect against
the true sector projector decays exponentially in the truncation radius.

Blocks with more particles than the impurity can hold carry an empty
sector: P = 0, G = 0, and the flow is exactly the identity.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import lattice
from .exceptions import GapClosed, QuadratureError
from .models import n_up
from .operators import commutator_norm, embed_matrix, operator_norm

PROJECTOR_TOL = 1e-8
GAP_TOL = 1e-10
UNITARITY_TOL = 1e-10
HALVING_CAP = 14
_FD_H = 1e-4
_SCALAR_H = 1e-6


def _as_fn(value):
    if callable(value):
        return value
    return lambda s, v=float(value): v


def _scalar_derivative(f, s, h=_SCALAR_H):
    return (f(s + h) - f(s - h)) / (2 * h)


@dataclass(frozen=True)
class ImpurityModes:
    """One impurity: n_spins boson modes co-located at a bulk site.

    coupling(s) is the hopping amplitude between the anchor site and
    each mode (the term enters H with a minus sign); potential(s) is a
    common on-mode energy, zero by default.
    """

    site: int
    n_spins: int
    coupling: object
    potential: object = 0.0


class BosonSystem:
    """Bulk graph with potential u plus impurity modes.

    Modes 0..n-1 are the bulk sites; impurity modes follow in the order
    the impurities are listed.  The one-particle operator is -Delta + u
    on the bulk block, coupling(s) hops to the impurity modes, and
    potential(s) on their diagonal.
    """

    def __init__(self, graph, u, impurities=()):
        self.graph = graph
        n = graph.n_sites
        u = np.full(n, float(u)) if np.isscalar(u) else np.asarray(u, dtype=float)
        if u.shape != (n,):
            raise ValueError("potential must be a scalar or one value per site")
        self.u = u
        self.impurities = tuple(impurities)
        for imp in self.impurities:
            if not (0 <= imp.site < n):
                raise ValueError(f"impurity site {imp.site} not on the graph")
            if imp.n_spins < 1:
                raise ValueError("impurities need at least one mode")
        self.n_modes = n + sum(imp.n_spins for imp in self.impurities)
        mode_site = list(range(n))
        pairs = []
        m = n
        for imp in self.impurities:
            for _ in range(imp.n_spins):
                mode_site.append(imp.site)
                pairs.append((imp.site, m, imp))
                m += 1
        self.mode_site = tuple(mode_site)
        self.impurity_modes = tuple(range(n, self.n_modes))
        self._pairs = tuple(pairs)

    @property
    def capacity(self):
        return len(self.impurity_modes)

    @property
    def anchor_sites(self):
        return tuple(sorted({imp.site for imp in self.impurities}))

    def single_particle(self, s):
        n = self.graph.n_sites
        M = np.zeros((self.n_modes, self.n_modes))
        for a, b in self.graph.edges:
            M[a, b] = M[b, a] = -1.0
        for x in range(n):
            M[x, x] = len(self.graph.neighbors(x)) + self.u[x]
        for site, mode, imp in self._pairs:
            c = _as_fn(imp.coupling)(s)
            M[site, mode] = M[mode, site] = -c
            M[mode, mode] = _as_fn(imp.potential)(s)
        return M

    def dsingle_particle(self, s):
        M = np.zeros((self.n_modes, self.n_modes))
        for site, mode, imp in self._pairs:
            M[site, mode] = M[mode, site] = -_scalar_derivative(
                _as_fn(imp.coupling), s
            )
            M[mode, mode] = _scalar_derivative(_as_fn(imp.potential), s)
        return M

    def block(self, n_particles):
        return SectorBlockHamiltonian(self, n_particles)

    def mode_distance(self, a, b):
        return self.graph.distance(self.mode_site[a], self.mode_site[b])


class SectorBlockHamiltonian:
    """The n-particle block of H(s) over hard-core configurations.

    Configurations are sorted mode tuples in lexicographic order; the
    position metric is the per-configuration tuple of lattice sites.
    """

    def __init__(self, system: BosonSystem, n):
        n = int(n)
        if not (0 <= n <= system.n_modes):
            raise ValueError("particle number out of range")
        self.system = system
        self.n = n
        self.configs = list(itertools.combinations(range(system.n_modes), n))
        self.index = {cfg: i for i, cfg in enumerate(self.configs)}
        self.dim = len(self.configs)
        # static hopping structure: union over s of off-diagonal entries
        struct = [[] for _ in range(system.n_modes)]
        for a, b in system.graph.edges:
            struct[a].append(b)
            struct[b].append(a)
        for site, mode, _ in system._pairs:
            struct[site].append(mode)
            struct[mode].append(site)
        self._targets = [tuple(t) for t in struct]

    def positions(self, cfg):
        return tuple(self.system.mode_site[m] for m in cfg)

    def _assemble(self, sp):
        H = np.zeros((self.dim, self.dim))
        for ci, cfg in enumerate(self.configs):
            H[ci, ci] = sum(sp[x, x] for x in cfg)
            occ = set(cfg)
            for x in cfg:
                for y in self._targets[x]:
                    if y in occ:
                        continue
                    cj = self.index[tuple(sorted((occ - {x}) | {y}))]
                    H[cj, ci] += sp[y, x]
        return H

    def matrix(self, s):
        return self._assemble(self.system.single_particle(s))

    def dmatrix(self, s):
        return self._assemble(self.system.dsingle_particle(s))


class BlockSectorPath:
    """Sector tracking inside one particle-number block.

    The sector dimension is C(capacity, n): at s=0 exactly the
    configurations with every particle on an impurity mode have zero
    energy, anything else costs at least the bulk gap.
    """

    def __init__(self, system: BosonSystem, n):
        self.system = system
        self.block = system.block(n)
        self.n = int(n)
        self.d = math.comb(system.capacity, self.n)
        self._cache = {}

    @property
    def dim(self):
        return self.block.dim

    def hamiltonian(self, s):
        return self.block.matrix(s)

    def dhamiltonian(self, s):
        return self.block.dmatrix(s)

    def spectral(self, s):
        key = float(s)
        if key not in self._cache:
            vals, vecs = np.linalg.eigh(self.block.matrix(key))
            self._cache[key] = (vals, vecs)
        return self._cache[key]

    def gap(self, s):
        if self.d == 0 or self.d >= self.dim:
            return np.inf
        vals, _ = self.spectral(s)
        return float(vals[self.d] - vals[self.d - 1])

    def projector(self, s):
        if self.d == 0:
            return np.zeros((self.dim, self.dim), dtype=complex)
        _, vecs = self.spectral(s)
        B = vecs[:, : self.d]
        return (B @ B.conj().T).astype(complex)


# ----------------------------------------------------- generator algebra


def kato_generator(P, dP):
    """G = i[P, dP], Hermitian for Hermitian inputs.

    For an exact projector path this satisfies dP = i[G, P], which is
    what makes the generated flow track P(s).
    """
    P = np.asarray(P, dtype=complex)
    dP = np.asarray(dP, dtype=complex)
    if operator_norm(P @ P - P, hermitian=True) > PROJECTOR_TOL:
        raise ValueError("P is not a projector")
    G = 1j * (P @ dP - dP @ P)
    return (G + G.conj().T) / 2


def projector_derivative(path, s, method="resolvent", h=_FD_H):
    """dP/ds for the sector projector of a block path.

    "resolvent": eigen-sum over (in, out) pairs with the exact dH,
    machine precision from the spectral data.  "finite-difference": one
    Richardson step on central differences of P, the independent check.
    """
    d = path.d
    dim = path.dim
    if d == 0:
        return np.zeros((dim, dim), dtype=complex)
    g = path.gap(s)
    if g < GAP_TOL:
        raise GapClosed(s, g)

    if method == "resolvent":
        vals, vecs = path.spectral(s)
        if d >= dim:
            return np.zeros((dim, dim), dtype=complex)
        dH = path.dhamiltonian(s)
        Vin = vecs[:, :d]
        Vout = vecs[:, d:]
        W = Vout.conj().T @ dH @ Vin
        denom = vals[None, :d] - vals[d:, None]
        M = Vout @ (W / denom) @ Vin.conj().T
        return M + M.conj().T

    if method == "finite-difference":
        def D(step):
            return (path.projector(s + step) - path.projector(s - step)) / (2 * step)

        return (4 * D(h / 2) - D(h)) / 3

    raise ValueError(f"unknown method {method!r}")


def truncate_generator(G, K, l, block: SectorBlockHamiltonian):
    """Zero every element between configurations with any particle
    outside K_l union the impurity modes, then re-Hermitize.

    Configurations that are only partially inside are dropped entirely;
    the resulting generator is supported in K_l plus the impurity.
    """
    G = np.asarray(G, dtype=complex)
    system = block.system
    allowed_sites = lattice.fatten(system.graph, set(K), l)
    imp = set(system.impurity_modes)
    keep = np.array(
        [
            all(m in imp or system.mode_site[m] in allowed_sites for m in cfg)
            for cfg in block.configs
        ]
    )
    Gl = np.where(np.outer(keep, keep), G, 0.0)
    return (Gl + Gl.conj().T) / 2


@dataclass(frozen=True)
class FlowState:
    s: float
    U: np.ndarray
    G: np.ndarray
    ds: float


def _expm_i(A):
    w, V = np.linalg.eigh(A)
    return (V * np.exp(1j * w)) @ V.conj().T


def integrate_flow(path, l, ds, K=None, method="resolvent", refine_tol=None):
    """Drive -i dU/ds = G_l(s) U by exponential midpoint steps.

    Returns (FlowState at s=1, grid, flow errors ||P(s) - U P(0) U*||
    on the grid).  l=None integrates the untruncated flow; otherwise K
    defaults to the impurity anchor sites.  With refine_tol set, ds is
    halved until the endpoint error stabilizes, up to a cap.
    """
    if l is not None and K is None:
        system = getattr(path, "system", None)
        if system is None:
            raise ValueError("truncated flow needs the coupling region K")
        K = system.anchor_sites

    if refine_tol is not None:
        prev = None
        step = ds
        for _ in range(HALVING_CAP):
            out = _flow_pass(path, l, step, K, method)
            err = out[2][-1]
            if prev is not None and abs(err - prev) <= refine_tol:
                return out
            prev = err
            step /= 2
        raise QuadratureError(
            f"flow step halving hit the cap at ds={step:.3e}"
        )
    return _flow_pass(path, l, ds, K, method)


def _flow_pass(path, l, ds, K, method):
    n_steps = max(1, int(round(1.0 / ds)))
    ds = 1.0 / n_steps
    dim = path.dim
    P0 = path.projector(0.0)
    U = np.eye(dim, dtype=complex)
    grid = [0.0]
    errors = [0.0]
    G = np.zeros((dim, dim), dtype=complex)
    for j in range(n_steps):
        smid = (j + 0.5) * ds
        dP = projector_derivative(path, smid, method=method)
        G = kato_generator(path.projector(smid), dP)
        if l is not None:
            G = truncate_generator(G, K, l, path.block)
        if np.any(G):
            U = _expm_i(ds * G) @ U
        s1 = (j + 1) * ds
        errors.append(
            operator_norm(path.projector(s1) - U @ P0 @ U.conj().T, hermitian=True)
        )
        grid.append(s1)
    defect = operator_norm(U.conj().T @ U - np.eye(dim), hermitian=True)
    if defect > UNITARITY_TOL:
        raise RuntimeError(f"flow lost unitarity: {defect:.3e}")
    return FlowState(1.0, U, G, ds), np.array(grid), np.array(errors)


# ------------------------------------------------- number conservation


def number_operator(G, impurity_spins=None):
    """Dense total particle number on a (possibly enlarged) volume.

    impurity_spins maps a site to its count of internal spin factors;
    such a site has local dimension 2^(count+1) and contributes the sum
    of occupations over all its factors.
    """
    impurity_spins = dict(impurity_spins or {})
    dim = G.dimension()
    total = np.zeros((dim, dim), dtype=complex)
    for x in G.sites():
        d = G.site_dims[x]
        if x in impurity_spins:
            nf = impurity_spins[x] + 1
            if 2**nf != d:
                raise ValueError(f"site {x} dimension {d} does not hold {nf} spins")
            local_dims = [2] * nf
            loc = sum(embed_matrix(n_up, (a,), local_dims) for a in range(nf))
        else:
            if d != 2:
                raise ValueError(f"site {x} is not a spin-1/2 site")
            loc = n_up
        total += embed_matrix(loc, (x,), G.site_dims)
    return total


def number_conservation_defect(H, G, impurity_spins=None):
    """||[H, N]|| for a dense Hamiltonian on G."""
    return commutator_norm(H, number_operator(G, impurity_spins))


# ------------------------------------------------------- Combes-Thomas


def config_distance(block: SectorBlockHamiltonian, a, b):
    """Max particle displacement under the best matching of a onto b."""
    a, b = tuple(a), tuple(b)
    if len(a) != len(b):
        raise ValueError("configurations carry different particle numbers")
    n = len(a)
    if n == 0:
        return 0
    if n > 6:
        raise ValueError("configuration distance only implemented for n <= 6")
    system = block.system
    best = None
    for perm in itertools.permutations(b):
        worst = max(system.mode_distance(x, y) for x, y in zip(a, perm))
        if best is None or worst < best:
            best = worst
            if best == 0:
                break
    return int(best)


def combes_thomas_profile(block: SectorBlockHamiltonian, z, x0, s=0.0):
    """Resolvent column magnitudes grouped by configuration distance.

    Returns (profile, rate): profile is a sorted list of rows (distance,
    max |<x|(H-z)^{-1}|x0>|); rate is the fitted exponential decay rate
    over the positive distances, None with fewer than two of them.
    """
    H = block.matrix(s)
    vals = np.linalg.eigvalsh(H)
    z = complex(z)
    if np.abs(vals - z).min() < 1e-8:
        raise ValueError("z is within 1e-8 of the block spectrum")
    x0 = tuple(sorted(x0))
    if x0 not in block.index:
        raise ValueError(f"reference configuration {x0} not in the block")
    e = np.zeros(block.dim, dtype=complex)
    e[block.index[x0]] = 1.0
    col = np.linalg.solve(H - z * np.eye(block.dim), e)

    grouped = {}
    for ci, cfg in enumerate(block.configs):
        dist = config_distance(block, cfg, x0)
        mag = abs(col[ci])
        if dist not in grouped or mag > grouped[dist]:
            grouped[dist] = mag
    profile = sorted(grouped.items())

    pts = [(d, v) for d, v in profile if d > 0 and v > 1e-300]
    rate = None
    if len(pts) >= 2:
        ds_, vs = zip(*pts)
        slope = np.polyfit(np.array(ds_, dtype=float), np.log(vs), 1)[0]
        rate = float(-slope)
    return profile, rate
