"""Interaction families, decay functions, and the locality constants.

The decay framework: F_mu(d) = exp(-mu d) F0(d) with a reproducing base
F0 (default (1+d)^-(nu+1)).  On a fixed finite graph the relevant constants
are plain maxima over sites:

    ||F_mu||  = max_x sum_y F_mu(d(x,y))
    C_mu      = max_{x,y} sum_z F_mu(d(x,z)) F_mu(d(z,y)) / F_mu(d(x,y))
    ||Phi||_mu = max_{x,y} sum_{X ni x,y} ||Phi(X)|| / F_mu(d(x,y))

The primed interaction norm drops single-site terms; it feeds the group
velocity v = 2 ||Phi||'_mu C_mu / mu and the locality length
xi = 1/mu + 2 v / g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lattice
from .operators import HamiltonianAction, LocalOperator, embed_matrix, operator_norm


class DecayFunctions:
    """F_mu on a fixed graph, with the derived constants cached."""

    def __init__(self, G, mu, nu=1, f0=None):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        self.graph = G
        self.mu = float(mu)
        self.nu = int(nu)
        self._f0 = f0 if f0 is not None else (lambda d: (1.0 + d) ** (-(self.nu + 1)))
        if self._f0(0) <= 0:
            raise ValueError("F0 must be positive at distance 0")
        dist = G._dist
        if not np.isfinite(dist).all():
            raise ValueError("decay constants need a connected graph")
        self._F = self.f(dist)
        self._F0 = self.f0(dist)

    def f0(self, d):
        return self._f0(np.asarray(d, dtype=float))

    def f(self, d):
        d = np.asarray(d, dtype=float)
        return np.exp(-self.mu * d) * self._f0(d)

    @property
    def f_norm(self):
        """||F_mu|| on this graph."""
        return float(self._F.sum(axis=1).max())

    @property
    def f0_norm(self):
        """||F_0|| on this graph (enters the Lieb-Robinson prefactor)."""
        return float(self._F0.sum(axis=1).max())

    @property
    def convolution_constant(self):
        """C_mu on this graph."""
        conv = self._F @ self._F
        return float((conv / self._F).max())


class InteractionFamily:
    """A finite collection of local terms keyed by their support."""

    def __init__(self, terms):
        self.terms = []
        for t in terms:
            if not isinstance(t, LocalOperator):
                raise TypeError("terms must be LocalOperator instances")
            self.terms.append(t)
        self._norms = [operator_norm(t.matrix, hermitian=t.hermitian) for t in self.terms]

    def regions(self):
        return [frozenset(t.support) for t in self.terms]

    def term_norms(self):
        return list(self._norms)

    def interaction_range(self, G):
        """Largest hop diameter of a support."""
        r = 0
        for t in self.terms:
            for a in t.support:
                for b in t.support:
                    r = max(r, G.distance(a, b))
        return r

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)


def interaction_norm(phi: InteractionFamily, decay: DecayFunctions, drop_single_site=False):
    """||Phi||_mu (or the primed variant excluding single-site terms)."""
    G = decay.graph
    n = G.n_sites
    acc = np.zeros((n, n))
    for t, nrm in zip(phi.terms, phi._norms):
        if drop_single_site and len(t.support) < 2:
            continue
        for a in t.support:
            for b in t.support:
                acc[a, b] += nrm
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = acc / decay._F
    return float(ratio.max()) if acc.any() else 0.0


def lr_velocity(phi, decay):
    """v = 2 ||Phi||'_mu C_mu / mu."""
    if decay.mu == 0:
        raise ValueError("velocity needs mu > 0")
    prime = interaction_norm(phi, decay, drop_single_site=True)
    return 2.0 * prime * decay.convolution_constant / decay.mu


def xi(mu, v, g):
    """Locality length 1/mu + 2 v / g."""
    if mu <= 0 or g <= 0 or v < 0:
        raise ValueError("need mu > 0, g > 0, v >= 0")
    return 1.0 / mu + 2.0 * v / g


def lr_bound_rhs(A: LocalOperator, B: LocalOperator, t, phi, decay):
    """Right-hand side of the commutator bound for disjointly supported A, B:

        (2 ||F_0|| / C_mu) ||A|| ||B|| min(|bd X|, |bd Y|)
            * exp(-mu (d(X,Y) - v |t|))
    """
    G = decay.graph
    X = G.check_region(A.support)
    Y = G.check_region(B.support)
    d = G.region_distance(X, Y)
    if d == 0:
        raise ValueError("supports must be disjoint, at hop distance >= 1")
    regions = phi.regions()
    bx = len(lattice.phi_boundary(X, regions))
    by = len(lattice.phi_boundary(Y, regions))
    v = lr_velocity(phi, decay)
    pref = 2.0 * decay.f0_norm / decay.convolution_constant
    return pref * A.norm() * B.norm() * min(bx, by) * np.exp(-decay.mu * (d - v * abs(t)))


def assemble_hamiltonian(phi: InteractionFamily, G, W=None, s=0.0, mode="matvec"):
    """sum(Phi) + W(s), either dense or as a kernel-backed matvec action."""
    terms = list(phi.terms)
    if W is not None:
        terms.extend(W.terms(s))
    act = HamiltonianAction(G, terms)
    if mode == "dense":
        return act.dense()
    if mode == "matvec":
        return act
    raise ValueError(f"unknown mode {mode!r}")


_SMOOTHNESS_GRID = 1001


class PerturbationPath:
    """Per-site perturbations W_i(s), s in [0, 1].

    entries: list of (site, fn) where fn(s) returns the matrix on that
    site's full local space.  C_W = sup_s ||d_s sum_i W_i(s)|| is estimated
    by central differences on a fixed 1001-point grid.
    """

    def __init__(self, G, entries):
        self.graph = G
        self.entries = []
        for site, fn in entries:
            site = int(site)
            d = G.site_dims[site]
            W0 = np.asarray(fn(0.0), dtype=complex)
            if W0.shape != (d, d):
                raise ValueError(f"W at site {site} has shape {W0.shape}, expected {(d, d)}")
            if np.abs(W0).max() > 1e-12:
                raise ValueError(f"W at site {site} must vanish at s=0")
            self.entries.append((site, fn))
        self.sites = tuple(s for s, _ in self.entries)
        self._c_w = None

    def terms(self, s):
        out = []
        for site, fn in self.entries:
            M = np.asarray(fn(s), dtype=complex)
            M = (M + M.conj().T) / 2
            out.append(LocalOperator((site,), (self.graph.site_dims[site],), M, hermitian=True))
        return out

    def total_on_support(self, s):
        """sum_i W_i(s) embedded on the joint space of the perturbed sites."""
        dims = [self.graph.site_dims[x] for x in sorted(set(self.sites))]
        order = {x: i for i, x in enumerate(sorted(set(self.sites)))}
        D = int(np.prod(dims, dtype=np.int64))
        out = np.zeros((D, D), dtype=complex)
        for t in self.terms(s):
            out += embed_matrix(t.matrix, (order[t.support[0]],), dims)
        return out

    @property
    def smoothness(self):
        """C_W on the fixed grid."""
        if self._c_w is None:
            grid = np.linspace(0.0, 1.0, _SMOOTHNESS_GRID)
            h = grid[1] - grid[0]
            worst = 0.0
            prev = self.total_on_support(0.0)
            # central differences in the interior, one-sided at the ends
            mats = [prev] + [self.total_on_support(s) for s in grid[1:]]
            for i in range(len(grid)):
                if i == 0:
                    D = (mats[1] - mats[0]) / h
                elif i == len(grid) - 1:
                    D = (mats[-1] - mats[-2]) / h
                else:
                    D = (mats[i + 1] - mats[i - 1]) / (2 * h)
                worst = max(worst, operator_norm(D, hermitian=True))
            self._c_w = worst
        return self._c_w


def linear_ramp(G, site, W_final):
    """W(s) = s * W_final at one site."""
    W_final = np.asarray(W_final, dtype=complex)
    return PerturbationPath(G, [(site, lambda s: s * W_final)])


def keyframe_path(G, site, frames):
    """Piecewise-linear W(s) through (s_k, matrix) keyframes."""
    frames = sorted(frames, key=lambda p: p[0])
    ss = np.array([p[0] for p in frames])
    if ss[0] > 0.0 or ss[-1] < 1.0:
        raise ValueError("keyframes must cover [0, 1]")
    mats = [np.asarray(p[1], dtype=complex) for p in frames]

    def fn(s):
        s = float(np.clip(s, 0.0, 1.0))
        j = int(np.searchsorted(ss, s, side="right")) - 1
        j = min(max(j, 0), len(ss) - 2)
        w = (s - ss[j]) / (ss[j + 1] - ss[j])
        return (1 - w) * mats[j] + w * mats[j + 1]

    return PerturbationPath(G, [(site, fn)])
