"""J1-J2 Heisenberg Hamiltonian: diagonal terms, connected configs, local energy.

Spin convention: configuration values v in {+1, -1} encode S^z = v/2, so a
bond (i, j) with coupling J contributes J * v_i * v_j / 4 on the diagonal
and, when the two spins are antiparallel, an exchange element J/2 to the
configuration with both spins flipped.  J1 = 1 sets the unit of energy; J2
bonds carry the lattice's dimensionless second-neighbor coupling (and are
skipped entirely when it is zero, keeping all stored matrix elements
nonzero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LcnError
from .lattice import Lattice


@dataclass
class ConnectedSet:
    """Row of the Hamiltonian reachable from one configuration."""

    diagonal: float
    neighbors: list  # (config, matrix element) pairs, all elements nonzero


_BOND_CACHE: dict = {}


def bond_arrays(lat: Lattice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Active bonds as index/coupling arrays (J2 bonds dropped when J2 = 0)."""
    key = (id(lat), lat.n_sites, lat.j2)
    hit = _BOND_CACHE.get(key)
    if hit is not None:
        return hit
    bonds = list(lat.j1_bonds)
    coup = [1.0] * len(bonds)
    if lat.j2 != 0.0:
        bonds += list(lat.j2_bonds)
        coup += [lat.j2] * len(lat.j2_bonds)
    arrays = (
        np.array([a for a, _ in bonds], dtype=np.int64),
        np.array([b for _, b in bonds], dtype=np.int64),
        np.array(coup, dtype=np.float64),
    )
    if len(_BOND_CACHE) > 64:
        _BOND_CACHE.clear()
    _BOND_CACHE[key] = arrays
    return arrays


def diagonal_energy(config: np.ndarray, lat: Lattice) -> float:
    """Sum over active bonds of J_b * v_i * v_j / 4."""
    bi, bj, coup = bond_arrays(lat)
    c = np.asarray(config)
    return float(0.25 * np.dot(c[bi] * c[bj], coup))


def connected_configs(config: np.ndarray, lat: Lattice) -> ConnectedSet:
    """All configurations coupled to ``config`` by one exchange, with elements."""
    bi, bj, coup = bond_arrays(lat)
    c = np.asarray(config)
    diag = float(0.25 * np.dot(c[bi] * c[bj], coup))
    neighbors = []
    anti = np.nonzero(c[bi] != c[bj])[0]
    for b in anti:
        flipped = c.copy()
        flipped[bi[b]] = -flipped[bi[b]]
        flipped[bj[b]] = -flipped[bj[b]]
        neighbors.append((flipped, 0.5 * coup[b]))
    return ConnectedSet(diagonal=diag, neighbors=neighbors)


def connected_batch(
    configs: np.ndarray, lat: Lattice
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized connected-set enumeration for a (B, N) batch.

    Returns (diagonal (B,), source_index (M,), neighbor_configs (M, N),
    matrix_elements (M,)) over all exchange moves of all rows.
    """
    bi, bj, coup = bond_arrays(lat)
    c = np.asarray(configs)
    diag = 0.25 * ((c[:, bi] * c[:, bj]) @ coup)
    src, bond = np.nonzero(c[:, bi] != c[:, bj])
    neigh = c[src].copy()
    m = np.arange(len(src))
    neigh[m, bi[bond]] = -neigh[m, bi[bond]]
    neigh[m, bj[bond]] = -neigh[m, bj[bond]]
    return diag, src, neigh, 0.5 * coup[bond]


def local_energies(configs: np.ndarray, lat: Lattice, ansatz) -> np.ndarray:
    """E_loc(c) = H_cc + sum_j H_cj psi(c_j)/psi(c) for each row of a batch.

    One batched wave-function evaluation covers sources and neighbors.
    """
    c = np.asarray(configs)
    b = c.shape[0]
    diag, src, neigh, elem = connected_batch(c, lat)
    if len(src) == 0:
        return diag.astype(complex)
    stacked = np.concatenate([c, neigh], axis=0)
    log_amp, phase = ansatz.log_amp_phase(stacked)
    la0, ph0 = log_amp[:b], phase[:b]
    lan, phn = log_amp[b:], phase[b:]
    amp = np.exp(lan - la0[src])
    dph = phn - ph0[src]
    re = elem * amp * np.cos(dph)
    im = elem * amp * np.sin(dph)
    e_loc = (
        diag
        + np.bincount(src, weights=re, minlength=b)
        + 1j * np.bincount(src, weights=im, minlength=b)
    )
    if not np.all(np.isfinite(e_loc)):
        bad = int(np.nonzero(~np.isfinite(e_loc))[0][0])
        raise LcnError(
            f"non-finite local energy for configuration {c[bad].tolist()} "
            f"(log_amp={la0[bad]})"
        )
    return e_loc


def local_energy(config: np.ndarray, lat: Lattice, ansatz) -> complex:
    return complex(local_energies(np.asarray(config)[None, :], lat, ansatz)[0])
