"""Concrete model builders.

Three families:

  * generic gapped chains (transverse-field Ising, xy with potential)
    for unique-ground-state experiments,
  * the spin-conserving xy model on rings and tori, unitarily a system
    of hard-core bosons (spin-up = occupied site), together with the
    impurity attachment that enlarges one site by an internal space,
  * Kitaev's toric code on small tori with the window geometry needed
    for topological-order checks.

Builders are pure and cheap; diagonalization happens on demand.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import interactions as itx
from . import lattice
from .exceptions import NotApplicable
from .operators import (
    LocalOperator,
    embed_matrix,
    eigendecompose,
    operator_norm,
    sigma_x,
    sigma_y,
    sigma_z,
)
from .sectors import HamiltonianPath

# spin-1/2 operators (eigenvalues +-1/2); S_plus maps down to up
S1 = sigma_x / 2
S2 = sigma_y / 2
S3 = sigma_z / 2
S_plus = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
S_minus = S_plus.conj().T
n_up = np.diag([1.0, 0.0]).astype(complex)  # 1/2 + S3

GAP_WARN_TOL = 1e-10


@dataclass(frozen=True)
class Model:
    """A lattice graph with its interaction family."""

    graph: lattice.LatticeGraph
    family: itx.InteractionFamily
    kind: str
    params: dict = field(default_factory=dict)

    def hamiltonian(self, mode="dense"):
        return itx.assemble_hamiltonian(self.family, self.graph, mode=mode)

    def spectral(self, mode="auto", k=6):
        return eigendecompose(self.hamiltonian("matvec"), mode=mode, k=k)


# --------------------------------------------------------- gapped chains


def build_gapped_chain(kind, params):
    """(Model, metadata) with the computed gap; warns instead of failing
    when the requested parameters turn out gapless."""
    if kind == "transverse-field-Ising":
        n = int(params["n"])
        J = float(params.get("J", 1.0))
        h = float(params.get("h", 2.0))
        periodic = bool(params.get("periodic", False))
        G = lattice.chain(n, periodic=periodic)
        terms = [
            LocalOperator((a, b), (2, 2), -J * np.kron(sigma_z, sigma_z), hermitian=True)
            for a, b in G.edges
        ]
        terms += [
            LocalOperator((x,), (2,), -h * sigma_x, hermitian=True) for x in G.sites()
        ]
        model = Model(G, itx.InteractionFamily(terms), kind, dict(params))
    elif kind == "xy-with-potential":
        n = int(params["n"])
        gamma = float(params["gamma"])
        u = _potential_array(params.get("u", gamma), n, gamma)
        periodic = bool(params.get("periodic", False))
        G = lattice.chain(n, periodic=periodic)
        model = Model(G, _xy_family(G, u), kind, dict(params, u=u))
    else:
        raise ValueError(f"unknown chain kind {kind!r}")

    S = model.spectral()
    vals = S.values
    gap = float(vals[1] - vals[0])
    meta = {"gap": gap, "ground_energy": float(vals[0]), "warnings": ()}
    if gap < GAP_WARN_TOL:
        meta["warnings"] = (
            f"computed gap {gap:.3e} is below tolerance; ground state degenerate",
        )
    return model, meta


def _potential_array(u, n, gamma):
    u = np.full(n, float(u)) if np.isscalar(u) else np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise ValueError("potential must be a scalar or one value per site")
    if gamma <= 0 or (u < gamma).any():
        raise ValueError("need u(x) >= gamma > 0 everywhere")
    return u


# ------------------------------------------------------------- xy model


def _xy_family(G, u):
    """Hopping -(S+S- + S-S+) per edge plus (u + deg) n_up per site.

    With the degree term the single-particle block is exactly -Delta + u;
    on periodic volumes deg = 2 nu, the stated form.
    """
    hop = -(np.kron(S_plus, S_minus) + np.kron(S_minus, S_plus))
    terms = [
        LocalOperator((a, b), (G.site_dims[a], G.site_dims[b]), hop, hermitian=True)
        for a, b in G.edges
    ]
    for x in G.sites():
        deg = len(G.neighbors(x))
        terms.append(
            LocalOperator((x,), (2,), (u[x] + deg) * n_up, hermitian=True)
        )
    return itx.InteractionFamily(terms)


@dataclass(frozen=True)
class ImpuritySpec:
    site: int
    n_spins: int
    coupling: str = "hopping-ramp"
    strength: float = 1.0


@dataclass(frozen=True)
class XYModelSpec:
    L: int
    nu: int = 1
    u: object = None  # scalar or per-site array; defaults to gamma
    gamma: float = 1.0
    impurity: ImpuritySpec | None = None


def build_xy_model(spec: XYModelSpec):
    """Bulk xy model on a ring (nu=1) or torus (nu=2).

    The ground state is the all-down product at energy zero and the gap
    is at least gamma (equal to it for constant potential).  An
    impurity, if requested, is attached separately via attach_impurity.
    """
    if spec.nu not in (1, 2):
        raise ValueError("nu must be 1 or 2")
    if spec.L < 3:
        raise ValueError("periodic volumes need L >= 3")
    if spec.nu == 1:
        G = lattice.chain(spec.L, periodic=True)
    else:
        G = lattice.torus(spec.L)
    u = _potential_array(spec.u if spec.u is not None else spec.gamma,
                         G.n_sites, spec.gamma)
    model = Model(G, _xy_family(G, u), "xy", {"spec": spec, "u": u})
    meta = {
        "ground_energy": 0.0,
        "gap_lower_bound": float(spec.gamma),
        "n_sites": G.n_sites,
    }
    return model, meta


def single_particle_hamiltonian(G, u):
    """-Delta + u on l^2 of the graph (the one-boson block)."""
    u = np.asarray(u, dtype=float)
    n = G.n_sites
    M = np.zeros((n, n))
    for a, b in G.edges:
        M[a, b] = M[b, a] = -1.0
    for x in range(n):
        M[x, x] = len(G.neighbors(x)) + u[x]
    return M


def vacuum_state(G):
    """All-down product state (the boson vacuum)."""
    psi = np.zeros(G.dimension(), dtype=complex)
    psi[-1] = 1.0  # all sites in their last local basis state
    return psi


# --------------------------------------- Matsubara-Matsueda correspondence


class MMCorrespondence:
    """Relabeling between spin basis states and hard-core boson
    configurations: spin-up (first local basis state) = occupied.

    Configurations are ordered by particle number, then lexicographically
    by the occupied-site tuple; the map is a basis permutation, hence
    unitary, and supports are preserved site by site.
    """

    def __init__(self, G):
        if any(d != 2 for d in G.site_dims):
            raise ValueError("the correspondence is defined for spin-1/2 sites")
        self.graph = G
        n = G.n_sites
        self.configs = []
        self.block_slices = {}
        start = 0
        for npart in range(n + 1):
            combos = list(itertools.combinations(range(n), npart))
            self.configs.extend(combos)
            self.block_slices[npart] = slice(start, start + len(combos))
            start += len(combos)
        self.perm = np.array([self.spin_index(c) for c in self.configs])

    def spin_index(self, config):
        # occupied site x contributes bit 0 at position x (site 0 slowest)
        n = self.graph.n_sites
        j = 0
        occ = set(config)
        for x in range(n):
            j = 2 * j + (0 if x in occ else 1)
        return j

    def config(self, spin_index):
        n = self.graph.n_sites
        return tuple(
            x for x in range(n) if not (spin_index >> (n - 1 - x)) & 1
        )

    def to_boson(self, obj):
        obj = np.asarray(obj)
        if obj.ndim == 1:
            return obj[self.perm]
        return obj[np.ix_(self.perm, self.perm)]

    def to_spin(self, obj):
        inv = np.argsort(self.perm)
        obj = np.asarray(obj)
        if obj.ndim == 1:
            return obj[inv]
        return obj[np.ix_(inv, inv)]


def matsubara_matsueda_map(obj, G):
    """Boson representation of a spin state or operator (see
    MMCorrespondence for the ordering)."""
    return MMCorrespondence(G).to_boson(obj)


# ------------------------------------------------------------- impurities


def coupling_preset(name, theta, n_spins=1):
    """Named spin-conserving couplings on H_k x I, I = (C^2)^(n_spins).

    "hopping-ramp": -theta s sum_a (S+_k S-_a + S-_k S+_a)
    "exchange-ramp": theta s sum_a (S1 S1 + S2 S2 + S3 S3) between k and a
    """
    dims = [2] * (n_spins + 1)  # site factor first, impurity spins after

    def pair(A, B, a):
        # A on the k factor (axis 0), B on impurity spin a (axis a+1)
        M = embed_matrix(np.kron(A, B), (0, a + 1), dims)
        return M

    static = np.zeros((2 ** (n_spins + 1),) * 2, dtype=complex)
    for a in range(n_spins):
        if name == "hopping-ramp":
            static += -theta * (pair(S_plus, S_minus, a) + pair(S_minus, S_plus, a))
        elif name == "exchange-ramp":
            static += theta * (
                pair(S1, S1, a) + pair(S2, S2, a) + pair(S3, S3, a)
            )
        else:
            raise ValueError(f"unknown coupling preset {name!r}")

    def W(s):
        return s * static

    return W


def _lift_term(t: LocalOperator, site, dI, G2):
    """The same local term on the enlarged space, identity on I."""
    new_dims = tuple(G2.site_dims[x] for x in t.support)
    if site not in t.support:
        return LocalOperator(t.support, new_dims, t.matrix, hermitian=t.hermitian)
    p = t.support.index(site)
    axes_dims = list(t.dims[: p + 1]) + [dI] + list(t.dims[p + 1 :])
    positions = [i if i <= p else i + 1 for i in range(len(t.dims))]
    M = embed_matrix(t.matrix, positions, axes_dims)
    return LocalOperator(t.support, new_dims, M, hermitian=t.hermitian)


def lift_state(psi, dims, site, phi):
    """psi (on product of dims) tensored with phi on the factor inserted
    directly after site's local space."""
    dims = list(dims)
    psi_r = np.asarray(psi, dtype=complex).reshape(dims)
    phi = np.asarray(phi, dtype=complex)
    out = np.expand_dims(psi_r, axis=site + 1) * phi.reshape(
        (1,) * (site + 1) + (len(phi),) + (1,) * (len(dims) - site - 1)
    )
    return out.ravel()


def attach_impurity(model: Model, k, impurity_dims, W_path, mu=None,
                    bulk_degeneracy=1, solver_k=None):
    """HamiltonianPath for the model with internal spaces I_k at the
    impurity sites and the coupling ramp W(s).

    k / impurity_dims: a site and its dim(I), or matching sequences.
    W_path: callable s -> matrix on the enlarged site space, a list of
    (site, callable), or a ready PerturbationPath on the enlarged graph.
    The unperturbed sector basis is the product (bulk eigenvectors) x
    (standard basis of I), so D = bulk_degeneracy * prod dim(I).
    """
    ks = [int(k)] if np.ndim(k) == 0 else [int(x) for x in k]
    dIs = [int(impurity_dims)] if np.ndim(impurity_dims) == 0 else [
        int(d) for d in impurity_dims
    ]
    if len(ks) != len(dIs):
        raise ValueError("impurity sites and dimensions must match up")
    if any(d < 1 for d in dIs):
        raise ValueError("impurity dimensions must be positive")
    if len(set(ks)) != len(ks):
        raise ValueError("impurity sites must be distinct")

    G = model.graph
    dims2 = list(G.site_dims)
    for site, dI in zip(ks, dIs):
        dims2[site] *= dI
    G2 = lattice.LatticeGraph(G.n_sites, G.edges, dims2)

    terms = list(model.family.terms)
    # lift through one enlargement at a time; intermediate graphs carry
    # the partially enlarged dimensions
    cur_dims = list(G.site_dims)
    for site, dI in zip(ks, dIs):
        if dI == 1:
            continue
        cur_dims[site] *= dI
        Gmid = lattice.LatticeGraph(G.n_sites, G.edges, cur_dims)
        terms = [_lift_term(t, site, dI, Gmid) for t in terms]
    phi2 = itx.InteractionFamily(terms)

    if isinstance(W_path, itx.PerturbationPath):
        W = W_path
        if set(W.sites) - set(ks):
            raise ValueError("coupling path must be supported on the impurity sites")
    else:
        entries = [(ks[0], W_path)] if callable(W_path) else [
            (int(s), fn) for s, fn in W_path
        ]
        if set(s for s, _ in entries) - set(ks):
            raise ValueError("coupling path must be supported on the impurity sites")
        W = itx.PerturbationPath(G2, entries)

    f = int(bulk_degeneracy)
    S = model.spectral(k=max(6, f + 5) if solver_k is None else solver_k)
    bulk = S.vectors[:, :f]

    cols = []
    for ib in range(f):
        vecs = [bulk[:, ib]]
        cur_dims = list(G.site_dims)
        for site, dI in zip(ks, dIs):
            if dI == 1:
                continue
            basis = np.eye(dI)
            vecs = [
                lift_state(v, cur_dims, site, basis[:, i])
                for v in vecs
                for i in range(dI)
            ]
            cur_dims[site] *= dI
        cols.extend(vecs)
    B = np.stack(cols, axis=1)

    d = B.shape[1]
    decay = itx.DecayFunctions(G2, mu) if mu is not None else None
    return HamiltonianPath(
        G2, phi2, W=W, rule=("fixed_d", d), decay=decay, initial_basis=B
    )


# ------------------------------------------------------------ toric code


@dataclass(frozen=True)
class ToricGeometry:
    """Edge-qubit bookkeeping for the L x L vertex torus.

    Horizontal edge (i,j) joins vertices (i,j)-(i,j+1) and gets qubit id
    2(iL+j); vertical edge (i,j) joins (i,j)-(i+1,j) and gets 2(iL+j)+1.
    """

    L: int

    def h_edge(self, i, j):
        L = self.L
        return 2 * ((i % L) * L + (j % L))

    def v_edge(self, i, j):
        L = self.L
        return 2 * ((i % L) * L + (j % L)) + 1

    def star(self, i, j):
        return (
            self.h_edge(i, j), self.h_edge(i, j - 1),
            self.v_edge(i, j), self.v_edge(i - 1, j),
        )

    def plaquette(self, i, j):
        return (
            self.h_edge(i, j), self.h_edge(i + 1, j),
            self.v_edge(i, j), self.v_edge(i, j + 1),
        )

    def qubit_vertices(self, qid):
        L = self.L
        cell, horizontal = divmod(qid, 2)
        i, j = divmod(cell, L)
        if horizontal == 0:
            return ((i, j), (i, (j + 1) % L))
        return ((i, j), ((i + 1) % L, j))

    def in_square(self, qubits, Lstar):
        """True if every listed qubit edge fits one common vertex window
        of side Lstar (Lstar+1 vertices per axis), anywhere on the torus."""
        L = self.L
        Lstar = int(Lstar)
        if Lstar >= L:
            return True
        if Lstar < 1:
            return False

        def fits(qid, a, b):
            cell, horizontal = divmod(qid, 2)
            i, j = divmod(cell, L)
            if horizontal == 0:
                return (i - a) % L <= Lstar and (j - b) % L <= Lstar - 1
            return (i - a) % L <= Lstar - 1 and (j - b) % L <= Lstar

        for a in range(L):
            for b in range(L):
                if all(fits(q, a, b) for q in qubits):
                    return True
        return False

    @property
    def default_Lstar(self):
        return self.L - 1


def build_toric_code(L):
    """Stars and plaquettes on the L x L vertex torus, unit couplings.

    Returns (Model, ToricGeometry).  Supported sizes are desk scale:
    L=2 (256-dim, dense) and L=3 (2^18, iterative).
    """
    if L not in (2, 3):
        raise ValueError("toric code supported for L in {2, 3}")
    geom = ToricGeometry(L)
    n_qubits = 2 * L * L

    # qubit adjacency: edges sharing a vertex
    by_vertex = {}
    for q in range(n_qubits):
        for vtx in geom.qubit_vertices(q):
            by_vertex.setdefault(vtx, []).append(q)
    pairs = set()
    for group in by_vertex.values():
        for a, b in itertools.combinations(sorted(group), 2):
            pairs.add((a, b))
    G = lattice.LatticeGraph(n_qubits, sorted(pairs), 2)

    def pauli_product(qubits, p):
        sup = tuple(sorted(qubits))
        M = np.array([[1.0]], dtype=complex)
        for _ in sup:
            M = np.kron(M, p)
        return LocalOperator(sup, (2,) * len(sup), -M, hermitian=True)

    terms = []
    for i in range(L):
        for j in range(L):
            terms.append(pauli_product(geom.star(i, j), sigma_x))
            terms.append(pauli_product(geom.plaquette(i, j), sigma_z))
    model = Model(G, itx.InteractionFamily(terms), "toric", {"L": L})
    return model, geom


def ground_sector_data(model: Model, k=8, deg_tol=1e-8):
    """(values, ground basis, degeneracy, gap) via dense or iterative
    diagonalization as dictated by size."""
    S = model.spectral(k=k)
    vals = S.values
    degeneracy = int(np.sum(vals < vals[0] + deg_tol))
    if degeneracy >= len(vals):
        raise ValueError("eigen-depth too small to resolve the ground space")
    gap = float(vals[degeneracy] - vals[0])
    return vals, S.vectors[:, :degeneracy], degeneracy, gap


def tqo_check(P, A: LocalOperator, Lstar, geom: ToricGeometry, G=None):
    """(z, deviation) for PAP = zP; NotApplicable outside the regime.

    P is the full-space ground projector; A a local observable whose
    support must fit an Lstar-window.
    """
    if not geom.in_square(A.support, Lstar):
        raise NotApplicable(
            f"support {A.support} does not fit a side-{Lstar} window"
        )
    dims = (2,) * (2 * geom.L * geom.L)
    A_full = embed_matrix(A.matrix, A.support, dims)
    PAP = P @ A_full @ P
    trP = np.trace(P).real
    z = complex(np.trace(PAP) / trP)
    deviation = operator_norm(PAP - z * P)
    return z, float(deviation)
