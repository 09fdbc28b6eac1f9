"""Exact diagonalization on the zero-magnetization sector.

Enumerates the S^z = 0 sector basis, assembles the sparse Hamiltonian from
the same connected-configuration enumeration the Monte Carlo uses, and finds
the lowest eigenpair: densely for small sectors, otherwise by Lanczos with
full reorthogonalization.  Also provides the exact-state utilities the rest
of the package tests itself against: wave-function overlap on the full
sector and a lookup ansatz that evaluates the exact ground state (the
zero-variance reference).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigError, ConvergenceError, LcnError
from .hamiltonian import connected_batch
from .lattice import Lattice

SECTOR_CAP = 20
DENSE_MAX_SITES = 12


@dataclass(frozen=True)
class SectorBasis:
    """All spin configurations with equal numbers of +1 and -1, ordered.

    Configurations are ordered by ascending bitmask, where bit k is set when
    spin k is up; this is the lexicographic order over (s_{N-1}, ..., s_0).
    """

    n_sites: int
    configs: np.ndarray  # (M, N) int8 in {+1, -1}
    masks: np.ndarray  # (M,) sorted ascending

    @property
    def size(self) -> int:
        return len(self.masks)

    def mask_of(self, configs: np.ndarray) -> np.ndarray:
        c = np.asarray(configs)
        bits = (c > 0).astype(np.int64)
        return bits @ (1 << np.arange(self.n_sites, dtype=np.int64))

    def index_of(self, configs: np.ndarray) -> np.ndarray:
        """Ordinals of configurations; raises if any lies outside the sector."""
        m = self.mask_of(configs)
        idx = np.searchsorted(self.masks, m)
        bad = (idx >= self.size) | (self.masks[np.minimum(idx, self.size - 1)] != m)
        if np.any(bad):
            raise LcnError("configuration outside the zero-magnetization sector")
        return idx


def enumerate_sector(n_sites: int, cap: int = SECTOR_CAP) -> SectorBasis:
    if n_sites % 2 != 0:
        raise ConfigError(f"sector enumeration needs even N, got {n_sites}")
    if n_sites > cap:
        raise ConfigError(f"N={n_sites} exceeds the sector cap {cap}")
    all_masks = np.arange(1 << n_sites, dtype=np.int64)
    bits = (all_masks[:, None] >> np.arange(n_sites, dtype=np.int64)) & 1
    masks = all_masks[bits.sum(axis=1) == n_sites // 2]
    configs = (2 * ((masks[:, None] >> np.arange(n_sites, dtype=np.int64)) & 1) - 1).astype(
        np.int8
    )
    return SectorBasis(n_sites=n_sites, configs=configs, masks=masks)


def build_sparse(lat: Lattice, basis: SectorBasis) -> sp.csr_matrix:
    """Sector Hamiltonian assembled row-by-row from connected configurations."""
    if basis.n_sites != lat.n_sites:
        raise ConfigError("basis does not match lattice size")
    m = basis.size
    rows, cols, vals = [], [], []
    chunk = max(1, 200_000 // max(1, lat.n_sites))
    diag_all = np.zeros(m)
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        diag, src, neigh, elem = connected_batch(basis.configs[lo:hi], lat)
        diag_all[lo:hi] = diag
        if len(src):
            rows.append(src + lo)
            cols.append(basis.index_of(neigh))
            vals.append(elem)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    h = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    h = h + sp.diags(diag_all)
    return h.tocsr()


@dataclass(frozen=True)
class ExactState:
    """Lowest eigenpair on the sector: energy and unit-norm real amplitudes."""

    energy: float
    amplitudes: np.ndarray
    basis: SectorBasis

    @property
    def energy_per_site(self) -> float:
        return self.energy / self.basis.n_sites


def dense_ground(h: sp.spmatrix) -> tuple[float, np.ndarray]:
    dense = h.toarray()
    vals, vecs = np.linalg.eigh(dense)
    return float(vals[0]), vecs[:, 0]


def lanczos_ground(
    h: sp.spmatrix,
    tol: float = 1e-10,
    max_iter: int = 2000,
    seed: int = 7,
) -> tuple[float, np.ndarray]:
    """Lowest eigenpair by Lanczos with full reorthogonalization.

    Converged when the explicit residual ||H v - E v|| drops below ``tol``.
    """
    n = h.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    vecs = [v]
    alphas, betas = [], []
    w = h @ v
    alphas.append(float(v @ w))
    w = w - alphas[0] * v
    for k in range(1, max_iter + 1):
        basis_mat = np.asarray(vecs)
        w = w - basis_mat.T @ (basis_mat @ w)  # full reorthogonalization
        beta = float(np.linalg.norm(w))
        if beta < 1e-13:
            # Krylov space closed; the tridiagonal eigenpair is exact.
            energy, ritz = _ritz_pair(alphas, betas, vecs)
            return energy, ritz
        v = w / beta
        vecs.append(v)
        betas.append(beta)
        w = h @ v - beta * vecs[-2]
        alphas.append(float(v @ w))
        w = w - alphas[-1] * v
        if k % 5 == 0 or k == max_iter:
            energy, ritz = _ritz_pair(alphas, betas, vecs)
            resid = float(np.linalg.norm(h @ ritz - energy * ritz))
            if resid < tol:
                return energy, ritz
    raise ConvergenceError(f"Lanczos did not reach residual {tol} in {max_iter} iterations")


def _ritz_pair(alphas, betas, vecs) -> tuple[float, np.ndarray]:
    vals, evecs = eigh_tridiagonal(np.asarray(alphas), np.asarray(betas))
    ritz = np.asarray(vecs).T @ evecs[:, 0]
    ritz /= np.linalg.norm(ritz)
    return float(vals[0]), ritz


def ground_state(lat: Lattice, method: str = "auto", cap: int = SECTOR_CAP) -> ExactState:
    """Ground state of the lattice Hamiltonian on the S^z = 0 sector."""
    basis = enumerate_sector(lat.n_sites, cap=cap)
    h = build_sparse(lat, basis)
    if method == "auto":
        method = "dense" if lat.n_sites <= DENSE_MAX_SITES else "lanczos"
    if method == "dense":
        energy, vec = dense_ground(h)
    elif method == "lanczos":
        energy, vec = lanczos_ground(h)
    else:
        raise ConfigError(f"unknown eigensolver {method!r}")
    # Fix the arbitrary overall sign: make the largest-magnitude entry positive.
    pivot = np.argmax(np.abs(vec))
    if vec[pivot] < 0:
        vec = -vec
    return ExactState(energy=energy, amplitudes=vec, basis=basis)


def overlap(exact: ExactState, ansatz, chunk: int = 4096) -> float:
    """|<psi_exact | psi_net>| with both states normalized on the sector."""
    basis = exact.basis
    log_amp = np.zeros(basis.size)
    phase = np.zeros(basis.size)
    for lo in range(0, basis.size, chunk):
        hi = min(basis.size, lo + chunk)
        la, ph = ansatz.log_amp_phase(basis.configs[lo:hi])
        log_amp[lo:hi], phase[lo:hi] = la, ph
    log_amp -= log_amp.max()  # guard exp overflow
    psi = np.exp(log_amp) * np.exp(1j * phase)
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        return 0.0
    return float(np.abs(np.vdot(exact.amplitudes.astype(complex), psi)) / norm)


class LookupAnsatz:
    """Wave function read off a sector-basis amplitude table.

    Amplitudes with value zero return log_amp = -inf, which samplers treat
    as an automatic reject.  Real negative amplitudes carry phase pi.
    """

    def __init__(self, basis: SectorBasis, amplitudes: np.ndarray, zero_tol: float = 1e-12):
        if len(amplitudes) != basis.size:
            raise ConfigError("amplitude table does not match basis size")
        self.basis = basis
        amps = np.asarray(amplitudes, dtype=np.float64).copy()
        # Amplitudes that vanish by symmetry come out of the eigensolver as
        # O(1e-16) noise; snap them to exact zeros so they map to the -inf
        # sentinel instead of producing astronomical psi ratios.
        amps[np.abs(amps) < zero_tol * np.abs(amps).max()] = 0.0
        self.amplitudes = amps
        with np.errstate(divide="ignore"):
            self._log_amp = np.log(np.abs(amps))
        self._phase = np.where(amps < 0, np.pi, 0.0)

    @property
    def n_sites(self) -> int:
        return self.basis.n_sites

    def log_amp_phase(self, configs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = self.basis.index_of(configs)
        return self._log_amp[idx], self._phase[idx]

    def log_amp(self, configs: np.ndarray) -> np.ndarray:
        return self.log_amp_phase(configs)[0]

    def forward(self, config: np.ndarray):
        la, ph = self.log_amp_phase(np.asarray(config)[None, :])
        return float(la[0]), float(ph[0])

    def log_psi_ratio(self, c_from: np.ndarray, c_to: np.ndarray) -> complex:
        la, ph = self.log_amp_phase(np.stack([np.asarray(c_from), np.asarray(c_to)]))
        return complex(la[1] - la[0], ph[1] - ph[0])


def lookup_ansatz(exact: ExactState) -> LookupAnsatz:
    return LookupAnsatz(exact.basis, exact.amplitudes)


class LookupWithOffsets(LookupAnsatz):
    """Lookup ansatz with trainable scalar offsets on log-amplitude and phase.

    The offsets shift psi by a global factor, so the state is unchanged and
    the variational gradient with respect to them must vanish at an
    eigenstate; used by the zero-variance tests.
    """

    def __init__(self, basis: SectorBasis, amplitudes: np.ndarray):
        super().__init__(basis, amplitudes)
        from . import autodiff as ad

        self.params = {
            "offset.log_amp": ad.param(np.zeros(())),
            "offset.phase": ad.param(np.zeros(())),
        }

    def forward_batch(self, configs: np.ndarray):
        from . import autodiff as ad

        la, ph = super().log_amp_phase(configs)
        la_t = ad.add(ad.tensor(la), self.params["offset.log_amp"])
        ph_t = ad.add(ad.tensor(ph), self.params["offset.phase"])
        return la_t, ph_t

    def log_amp_phase(self, configs: np.ndarray):
        la, ph = super().log_amp_phase(configs)
        return (
            la + float(self.params["offset.log_amp"].data),
            ph + float(self.params["offset.phase"].data),
        )
