"""Lattice generation, virtual-vertex augmentation, and grid embedding.

Builds periodic square, triangular, honeycomb, and kagome lattices with J1
(nearest-neighbor) and J2 (second-nearest-neighbor) bond lists, where
"nearest" is measured by Euclidean distance on the torus.  Honeycomb and
kagome lattices are completed into triangular lattices by inserting virtual
vertices at hexagon centers; every lattice is then embedded into an integer
parallelogram grid so that regular convolutions can run on it.

All sites are addressed by integer coordinates (row, col) in a "fine" basis:
the lattice's own Bravais basis for square/triangular, and the finer
triangular basis in which real plus virtual sites fill every cell for
honeycomb/kagome.  Torus translations act as integer shifts in this basis,
which makes periodic wrap tables exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import LatticeError, UnsupportedError

NAMED_TYPES = ("square", "triangular", "honeycomb", "kagome")

# Fine-basis Cartesian vectors (row vector per basis direction).  The fine
# basis is chosen with 60 degrees between b1 and b2 for triangular-family
# lattices; the shear direction is fixed once (symmetry makes the choice
# irrelevant for physics).
_SQ3 = np.sqrt(3.0)
_FINE_BASIS = {
    "square": np.array([[1.0, 0.0], [0.0, 1.0]]),
    "triangular": np.array([[1.0, 0.0], [0.5, 0.5 * _SQ3]]),
    "honeycomb": np.array([[1.0, 0.0], [0.5, 0.5 * _SQ3]]),
    "kagome": np.array([[0.5, 0.0], [0.25, 0.25 * _SQ3]]),
}

# Integer fine-basis offsets (dcol, drow) of J1 and J2 neighbors, keyed by
# sublattice class.  Derived from the Euclidean neighbor shells of each
# lattice; verified against brute-force distance enumeration in the tests.
_NEIGHBOR_OFFSETS = {
    "square": {
        "j1": {0: [(1, 0), (-1, 0), (0, 1), (0, -1)]},
        "j2": {0: [(1, 1), (-1, -1), (1, -1), (-1, 1)]},
    },
    "triangular": {
        "j1": {0: [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)]},
        "j2": {0: [(1, 1), (-1, -1), (2, -1), (-2, 1), (1, -2), (-1, 2)]},
    },
    # Honeycomb classes: 0 = sublattice A, 1 = sublattice B.  J2 couples
    # same-sublattice sites across the hexagon (distance sqrt(3)).
    "honeycomb": {
        "j1": {0: [(1, 0), (-1, 1), (0, -1)], 1: [(-1, 0), (1, -1), (0, 1)]},
        "j2": {
            0: [(2, -1), (-2, 1), (1, 1), (-1, -1), (1, -2), (-1, 2)],
            1: [(2, -1), (-2, 1), (1, 1), (-1, -1), (1, -2), (-1, 2)],
        },
    },
    # Kagome classes: 0 at the cell origin, 1 at a1/2, 2 at a2/2.
    "kagome": {
        "j1": {
            0: [(1, 0), (-1, 0), (0, 1), (0, -1)],
            1: [(1, 0), (-1, 0), (-1, 1), (1, -1)],
            2: [(0, 1), (0, -1), (1, -1), (-1, 1)],
        },
        "j2": {
            0: [(2, -1), (-2, 1), (1, -2), (-1, 2)],
            1: [(1, 1), (-1, -1), (1, -2), (-1, 2)],
            2: [(1, 1), (-1, -1), (2, -1), (-2, 1)],
        },
    },
}

# Sublattice fine coordinates (col, row) of each basis site within cell (p, q)
# as affine functions of (p, q): coord = p * A1 + q * A2 + offset.
_CELL_VECTORS = {
    "square": {"a1": (1, 0), "a2": (0, 1), "sites": [(0, 0)], "virtual": []},
    "triangular": {"a1": (1, 0), "a2": (0, 1), "sites": [(0, 0)], "virtual": []},
    "honeycomb": {"a1": (2, -1), "a2": (1, 1), "sites": [(0, 0), (1, 0)], "virtual": [(2, 0)]},
    "kagome": {"a1": (2, 0), "a2": (0, 2), "sites": [(0, 0), (1, 0), (0, 1)], "virtual": [(1, 1)]},
}


@dataclass(frozen=True)
class LatticeSpec:
    """Input description of a lattice: type, supercell size, and J2 coupling.

    J1 is fixed to 1 (the energy unit); ``j2`` is the dimensionless coupling
    of the second-neighbor bonds.  ``custom`` lattices take explicit bond
    lists and are used for tiny test systems where periodic images on a
    named torus would coincide.
    """

    lattice_type: str
    n1: int = 0
    n2: int = 0
    j2: float = 0.0
    custom_n_sites: int = 0
    custom_j1_bonds: Sequence[tuple[int, int]] = ()
    custom_j2_bonds: Sequence[tuple[int, int]] = ()

    def validate(self) -> None:
        if self.lattice_type not in NAMED_TYPES + ("custom",):
            raise LatticeError(f"unknown lattice type {self.lattice_type!r}")
        if not np.isfinite(self.j2):
            raise LatticeError("j2 must be finite")
        if self.lattice_type == "custom":
            if self.custom_n_sites < 1:
                raise LatticeError("custom lattice needs custom_n_sites >= 1")
            return
        # Below these sizes, periodic images of active bonds coincide and the
        # bond lists would no longer represent the Hamiltonian as plain sets.
        # Kagome has a halved cell spacing, so smaller supercells stay clean;
        # the constructor additionally verifies image multiplicities directly.
        min_size = 2 if self.lattice_type == "kagome" else (4 if self.j2 != 0.0 else 3)
        if self.n1 < min_size or self.n2 < min_size:
            raise LatticeError(
                f"{self.lattice_type} lattice requires n1, n2 >= {min_size} "
                f"(got {self.n1} x {self.n2}, j2={self.j2})"
            )


@dataclass(frozen=True)
class Lattice:
    """A periodic lattice with J1/J2 bond lists and torus translations.

    ``fine_coords`` holds the integer (row, col) coordinate of every real
    site in the unified basis; ``wrap_u1``/``wrap_u2`` are the integer
    vectors identifying points on the torus, i.e. ``coord`` and
    ``coord + s*u1 + t*u2`` are the same site.
    """

    lattice_type: str
    n1: int
    n2: int
    j2: float
    n_sites: int
    positions: np.ndarray
    j1_bonds: tuple[tuple[int, int], ...]
    j2_bonds: tuple[tuple[int, int], ...]
    translations: Optional[tuple[np.ndarray, np.ndarray]]
    fine_coords: Optional[np.ndarray] = None
    sublattice: Optional[np.ndarray] = None
    wrap_u1: Optional[tuple[int, int]] = None
    wrap_u2: Optional[tuple[int, int]] = None
    fine_basis: Optional[np.ndarray] = None

    def j1_degree(self, i: int) -> int:
        return sum(1 for a, b in self.j1_bonds if i in (a, b))


@dataclass(frozen=True)
class AugmentedLattice:
    """Lattice plus virtual vertices completing it to a full grid torus.

    ``tri_coords`` lists (row, col) integer coordinates for the N real sites
    followed by the ``n_virtual`` virtual vertices.  The combined set covers
    every cell of the torus exactly once.
    """

    base: Lattice
    n_virtual: int
    tri_coords: np.ndarray


CELL_ALIGN_PAD = 0
CELL_ORIGINAL = 1
CELL_VIRTUAL = 2


@dataclass(frozen=True)
class GridEmbedding:
    """Integer-grid embedding of an augmented lattice with a periodic ring.

    ``cell_kind[r, c]`` marks each grid cell as alignment padding, an
    original site, or a virtual vertex; ``cell_id`` carries the site index
    (or virtual index) of non-pad cells.  ``wrap_src`` maps every position of
    the one-cell-wide padded frame (H+2) x (W+2) to its interior source cell,
    or to (-1, -1) for cells padded with zero.  Interior positions map to
    themselves.
    """

    height: int
    width: int
    cell_kind: np.ndarray
    cell_id: np.ndarray
    site_cells: np.ndarray
    virtual_cells: np.ndarray
    wrap_src: np.ndarray
    pad_virtual: bool
    mask_enabled: bool
    lattice_type: str
    ring_width: int = 1

    @property
    def n_sites(self) -> int:
        return len(self.site_cells)

    @property
    def n_virtual(self) -> int:
        return len(self.virtual_cells)

    @property
    def n_align_pad(self) -> int:
        return int(np.sum(self.cell_kind == CELL_ALIGN_PAD))


def _site_index(p: int, q: int, s: int, n1: int, n2: int, nb: int) -> int:
    return (q * n1 + p) * nb + s


def _canonical_lookup(coords: np.ndarray) -> dict:
    """Map fine (row, col) tuples to indices for canonical coordinates."""
    return {(int(r), int(c)): i for i, (r, c) in enumerate(coords)}


def _reduce_to_canonical(coord, lookup, u1, u2, reach: int = 3):
    """Find the canonical index equivalent to ``coord`` modulo s*u1 + t*u2."""
    r, c = coord
    for s in range(-reach, reach + 1):
        for t in range(-reach, reach + 1):
            key = (r - s * u1[0] - t * u2[0], c - s * u1[1] - t * u2[1])
            if key in lookup:
                return lookup[key], (s, t)
    return None, None


def build_lattice(spec: LatticeSpec) -> Lattice:
    """Construct a lattice from its spec; bonds by Euclidean neighbor shells.

    Raises LatticeError if the supercell is too small (a bond would connect
    a site pair through more than one minimal periodic image, or to itself).
    """
    spec.validate()
    if spec.lattice_type == "custom":
        return _build_custom(spec)

    kind = spec.lattice_type
    n1, n2 = spec.n1, spec.n2
    cellv = _CELL_VECTORS[kind]
    a1, a2 = cellv["a1"], cellv["a2"]
    basis_sites = cellv["sites"]
    nb = len(basis_sites)
    n_sites = n1 * n2 * nb

    # Fine integer coordinates (row, col) per site; col multiplies b1,
    # row multiplies b2.
    coords = np.zeros((n_sites, 2), dtype=np.int64)
    sublattice = np.zeros(n_sites, dtype=np.int64)
    for q in range(n2):
        for p in range(n1):
            for s, (sc, sr) in enumerate(basis_sites):
                idx = _site_index(p, q, s, n1, n2, nb)
                col = p * a1[0] + q * a2[0] + sc
                row = p * a1[1] + q * a2[1] + sr
                coords[idx] = (row, col)
                sublattice[idx] = s

    u1 = (n1 * a1[1], n1 * a1[0])  # (drow, dcol) of a torus step along a1
    u2 = (n2 * a2[1], n2 * a2[0])
    lookup = _canonical_lookup(coords)

    basis = _FINE_BASIS[kind]
    positions = coords[:, ::-1].astype(float) @ basis  # (col, row) @ (b1; b2)

    def collect(offsets_by_class, label, active):
        pair_count: dict[tuple[int, int], int] = {}
        for i in range(n_sites):
            for (dc, dr) in offsets_by_class[int(sublattice[i])]:
                target = (coords[i, 0] + dr, coords[i, 1] + dc)
                j, _ = _reduce_to_canonical(target, lookup, u1, u2)
                if j is None:
                    raise LatticeError(f"internal: {label} neighbor not on lattice")
                if j == i:
                    raise LatticeError(
                        f"{kind} {n1}x{n2}: {label} bond connects site {i} to itself; "
                        "supercell too small"
                    )
                key = (min(i, j), max(i, j))
                pair_count[key] = pair_count.get(key, 0) + 1
        dup = [k for k, v in pair_count.items() if v > 2]
        if dup and active:
            raise LatticeError(
                f"{kind} {n1}x{n2}: {label} bonds {dup[:3]} have multiple minimal "
                "periodic images; supercell too small"
            )
        return tuple(sorted(pair_count))

    j1_bonds = collect(_NEIGHBOR_OFFSETS[kind]["j1"], "J1", active=True)
    j2_bonds = collect(_NEIGHBOR_OFFSETS[kind]["j2"], "J2", active=spec.j2 != 0.0)

    def translation(shift):
        perm = np.zeros(n_sites, dtype=np.int64)
        for i in range(n_sites):
            target = (coords[i, 0] + shift[0], coords[i, 1] + shift[1])
            j, _ = _reduce_to_canonical(target, lookup, u1, u2)
            perm[i] = j
        return perm

    t1 = translation((a1[1], a1[0]))
    t2 = translation((a2[1], a2[0]))

    return Lattice(
        lattice_type=kind,
        n1=n1,
        n2=n2,
        j2=spec.j2,
        n_sites=n_sites,
        positions=positions,
        j1_bonds=j1_bonds,
        j2_bonds=j2_bonds,
        translations=(t1, t2),
        fine_coords=coords,
        sublattice=sublattice,
        wrap_u1=u1,
        wrap_u2=u2,
        fine_basis=basis,
    )


def _build_custom(spec: LatticeSpec) -> Lattice:
    n = spec.custom_n_sites

    def check(bonds, label):
        seen = set()
        for (i, j) in bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise LatticeError(f"{label} bond ({i},{j}) out of range for {n} sites")
            if i == j:
                raise LatticeError(f"{label} bond ({i},{j}) is a self-loop")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise LatticeError(f"duplicate {label} bond {key}")
            seen.add(key)
        return tuple(sorted(seen))

    j1 = check(spec.custom_j1_bonds, "J1")
    j2 = check(spec.custom_j2_bonds, "J2")
    positions = np.stack([np.arange(n, dtype=float), np.zeros(n)], axis=1)
    return Lattice(
        lattice_type="custom",
        n1=0,
        n2=0,
        j2=spec.j2,
        n_sites=n,
        positions=positions,
        j1_bonds=j1,
        j2_bonds=j2,
        translations=None,
    )


def augment(lat: Lattice) -> AugmentedLattice:
    """Insert virtual vertices at hexagon centers (honeycomb, kagome).

    Square and triangular lattices pass through unchanged (zero virtual
    vertices); the combined coordinate set covers the full fine torus.
    """
    if lat.lattice_type == "custom":
        raise UnsupportedError("custom lattices cannot be augmented onto a grid")
    cellv = _CELL_VECTORS[lat.lattice_type]
    virt_sites = cellv["virtual"]
    if not virt_sites:
        return AugmentedLattice(base=lat, n_virtual=0, tri_coords=lat.fine_coords.copy())
    a1, a2 = cellv["a1"], cellv["a2"]
    coords = [lat.fine_coords]
    vcoords = []
    for q in range(lat.n2):
        for p in range(lat.n1):
            for (sc, sr) in virt_sites:
                vcoords.append((p * a1[1] + q * a2[1] + sr, p * a1[0] + q * a2[0] + sc))
    coords.append(np.array(vcoords, dtype=np.int64))
    tri = np.concatenate(coords, axis=0)
    return AugmentedLattice(base=lat, n_virtual=len(vcoords), tri_coords=tri)


def grid_embed(
    aug: AugmentedLattice, pad_virtual: bool, mask_enabled: bool, ring_width: int = 1
) -> GridEmbedding:
    """Embed an augmented lattice into an H x W grid with a periodic ring.

    Coordinates are shifted to a non-negative range; the bounding
    parallelogram defines H x W, with alignment padding filling cells not
    occupied by any site.  The ring of ``ring_width`` cells around the grid
    is filled from the torus identifications: each ring cell maps to the
    unique occupied interior cell equivalent to it, or to zero when the
    source would be a virtual vertex and ``pad_virtual`` is off.
    """
    lat = aug.base
    tri = aug.tri_coords
    n_sites = lat.n_sites
    rmin, cmin = tri.min(axis=0)
    shifted = tri - np.array([rmin, cmin])
    height = int(shifted[:, 0].max()) + 1
    width = int(shifted[:, 1].max()) + 1

    cell_kind = np.full((height, width), CELL_ALIGN_PAD, dtype=np.int8)
    cell_id = np.full((height, width), -1, dtype=np.int64)
    for i, (r, c) in enumerate(shifted):
        if cell_kind[r, c] != CELL_ALIGN_PAD:
            raise LatticeError(f"internal: grid cell ({r},{c}) assigned twice")
        if i < n_sites:
            cell_kind[r, c] = CELL_ORIGINAL
            cell_id[r, c] = i
        else:
            cell_kind[r, c] = CELL_VIRTUAL
            cell_id[r, c] = i - n_sites

    site_cells = shifted[:n_sites].copy()
    virtual_cells = shifted[n_sites:].copy()

    # Occupied-cell lookup in unshifted fine coordinates.
    lookup = {(int(r), int(c)): i for i, (r, c) in enumerate(tri)}
    u1, u2 = lat.wrap_u1, lat.wrap_u2

    rw = ring_width
    wrap_src = np.full((height + 2 * rw, width + 2 * rw, 2), -1, dtype=np.int64)
    for rr in range(height + 2 * rw):
        for cc in range(width + 2 * rw):
            r, c = rr - rw, cc - rw
            if 0 <= r < height and 0 <= c < width:
                wrap_src[rr, cc] = (r, c)
                continue
            idx, _ = _reduce_to_canonical((r + rmin, c + cmin), lookup, u1, u2)
            if idx is None:
                raise LatticeError("internal: ring cell has no periodic source")
            sr, sc = shifted[idx]
            if idx >= n_sites and not pad_virtual:
                continue  # stays (-1, -1): zero padding
            wrap_src[rr, cc] = (sr, sc)

    return GridEmbedding(
        height=height,
        width=width,
        cell_kind=cell_kind,
        cell_id=cell_id,
        site_cells=site_cells,
        virtual_cells=virtual_cells,
        wrap_src=wrap_src,
        pad_virtual=pad_virtual,
        mask_enabled=mask_enabled,
        lattice_type=lat.lattice_type,
        ring_width=rw,
    )


def line_embed(lat: Lattice) -> GridEmbedding:
    """Degenerate 1 x N embedding for custom lattices (no periodic ring).

    Lets the network ansatz run on explicit-bond test systems; the ring is
    all zero padding and no cell is masked.
    """
    n = lat.n_sites
    cell_kind = np.full((1, n), CELL_ORIGINAL, dtype=np.int8)
    cell_id = np.arange(n, dtype=np.int64).reshape(1, n)
    site_cells = np.stack([np.zeros(n, dtype=np.int64), np.arange(n, dtype=np.int64)], axis=1)
    wrap_src = np.full((3, n + 2, 2), -1, dtype=np.int64)
    wrap_src[1, 1 : n + 1, 0] = 0
    wrap_src[1, 1 : n + 1, 1] = np.arange(n)
    return GridEmbedding(
        height=1,
        width=n,
        cell_kind=cell_kind,
        cell_id=cell_id,
        site_cells=site_cells,
        virtual_cells=np.zeros((0, 2), dtype=np.int64),
        wrap_src=wrap_src,
        pad_virtual=False,
        mask_enabled=False,
        lattice_type="custom",
    )


def embed_for(
    lat: Lattice, pad_virtual: bool, mask_enabled: bool, ring_width: int = 1
) -> GridEmbedding:
    """Grid embedding for any lattice: augmented grid, or a line for custom."""
    if lat.lattice_type == "custom":
        return line_embed(lat)
    return grid_embed(
        augment(lat), pad_virtual=pad_virtual, mask_enabled=mask_enabled, ring_width=ring_width
    )


def lattice_to_json(lat: Lattice) -> dict:
    """JSON-serializable dict of the lattice (schema: see README)."""
    return {
        "lattice_type": lat.lattice_type,
        "n1": lat.n1,
        "n2": lat.n2,
        "j2": lat.j2,
        "n_sites": lat.n_sites,
        "positions": [[float(x), float(y)] for x, y in lat.positions],
        "j1_bonds": [list(b) for b in lat.j1_bonds],
        "j2_bonds": [list(b) for b in lat.j2_bonds],
        "translations": None
        if lat.translations is None
        else [lat.translations[0].tolist(), lat.translations[1].tolist()],
    }


def embedding_to_json(emb: GridEmbedding) -> dict:
    """JSON-serializable dict of the grid embedding (schema: see README)."""
    kind_names = {CELL_ALIGN_PAD: "pad", CELL_ORIGINAL: "site", CELL_VIRTUAL: "virtual"}
    grid = [
        [
            {"kind": kind_names[int(emb.cell_kind[r, c])], "id": int(emb.cell_id[r, c])}
            for c in range(emb.width)
        ]
        for r in range(emb.height)
    ]
    ring = []
    for rr in range(emb.height + 2):
        for cc in range(emb.width + 2):
            if 0 < rr <= emb.height and 0 < cc <= emb.width:
                continue
            sr, sc = emb.wrap_src[rr, cc]
            ring.append(
                {
                    "pos": [int(rr - 1), int(cc - 1)],
                    "source": None if sr < 0 else [int(sr), int(sc)],
                }
            )
    return {
        "height": emb.height,
        "width": emb.width,
        "pad_virtual": emb.pad_virtual,
        "mask_enabled": emb.mask_enabled,
        "grid": grid,
        "wrap_ring": ring,
    }


def dump_json(obj: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
