"""Nested two-level overlapping decomposition of the structured mesh.

The unit square is partitioned into M-by-M coarse boxes, each extended by
``layers_c`` element layers to give the overlapping coarse subdomains.  Every
coarse subdomain is in turn partitioned into q-by-q fine boxes that are
extended by ``layers_f`` layers and clipped back to the coarse subdomain, so
the fine family of subdomain i covers it exactly.  Dof bookkeeping follows
the active/interior split: a dof is active on a subdomain when its basis
support touches it, and interior when the support is contained in it.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import ConfigError


@dataclass(frozen=True)
class Subdomain:
    """One overlapping subdomain with its dof bookkeeping.

    ``pou`` holds the family-relative partition-of-unity weight per active
    dof (1/multiplicity on interior dofs, 0 on the remaining active dofs);
    ``idof_in_ov`` gives the positions of the interior dofs inside ``ovdof``.
    """

    elements: np.ndarray        # sorted triangle indices
    element_mask: np.ndarray    # boolean over all triangles
    ovdof: np.ndarray           # active dofs, ascending
    idof: np.ndarray            # interior dofs, ascending
    idof_in_ov: np.ndarray
    pou: np.ndarray             # per-ovdof weight
    diameter: float


@dataclass(frozen=True)
class TwoLevelDecomposition:
    coarse: list
    fine: list                       # fine[i][j] is a Subdomain
    coarse_multiplicity: np.ndarray  # per dof, over the coarse family
    fine_multiplicity: np.ndarray    # per dof, over all (i, j) globally
    Lambda: int
    Hc: float
    Hf: float
    layers_c: int
    layers_f: int

    @property
    def n_coarse(self):
        return len(self.coarse)

    @property
    def fine_counts(self):
        return [len(fam) for fam in self.fine]

    def fine_flat(self):
        for i, fam in enumerate(self.fine):
            for j, sub in enumerate(fam):
                yield i, j, sub


def extend_by_layers(mesh, elements, layers):
    """Extend an element set by ``layers`` rings of vertex-adjacent elements.

    One layer adds every triangle sharing at least one vertex with the set;
    ``layers=0`` returns the set unchanged.
    """
    mask = _as_mask(mesh, elements)
    if not mask.any():
        raise ValueError("cannot extend an empty element set")
    for _ in range(int(layers)):
        verts = (mesh.incidence.T @ mask) > 0
        mask = (mesh.incidence @ verts) > 0
    return np.flatnonzero(mask)


def restrict(v, sub, interior=False):
    """Select the subdomain entries of a global dof vector.

    ``interior=False`` restricts onto the active dofs (the local space
    without boundary condition), ``interior=True`` onto the interior dofs
    (local space with zero trace).
    """
    v = np.asarray(v)
    idx = sub.idof if interior else sub.ovdof
    return v[idx]


def extend(w, sub, n_dofs, interior=False):
    """Zero-padded extension, the adjoint of :func:`restrict`."""
    w = np.asarray(w)
    idx = sub.idof if interior else sub.ovdof
    if w.shape[0] != idx.size:
        raise ValueError(
            "local vector has length %d, subdomain carries %d dofs"
            % (w.shape[0], idx.size)
        )
    out = np.zeros(n_dofs)
    out[idx] = w
    return out


def build_two_level(mesh, space, coarse_m, fine_q, layers_c=1, layers_f=1):
    """Build the nested decomposition with M^2 coarse and q^2 fine boxes each.

    Requires ``coarse_m`` to divide ``n_per_side`` and ``fine_q`` to divide
    ``n_per_side // coarse_m`` so the box lattice is exact, and at least one
    overlap layer on both levels.
    """
    n = mesh.n_per_side
    M = int(coarse_m)
    q = int(fine_q)
    if M < 1 or n % M != 0:
        raise ConfigError("coarse_M=%d must divide n_per_side=%d" % (M, n))
    wc = n // M
    if q < 1 or wc % q != 0:
        raise ConfigError(
            "fine_q=%d must divide n_per_side/coarse_M=%d" % (q, wc)
        )
    if layers_c < 1 or layers_f < 1:
        raise ConfigError("both overlap layer counts must be >= 1")
    wf = wc // q

    cells = np.arange(mesh.n_triangles) // 2
    cell_x = cells % n
    cell_y = cells // n

    coarse_masks = []
    fine_masks = []
    for by in range(M):
        for bx in range(M):
            base = (
                (cell_x >= bx * wc)
                & (cell_x < (bx + 1) * wc)
                & (cell_y >= by * wc)
                & (cell_y < (by + 1) * wc)
            )
            ext = _mask_from(
                mesh, extend_by_layers(mesh, base, layers_c)
            )
            coarse_masks.append(ext)

            pieces = []
            jx = np.clip((cell_x - bx * wc) // wf, 0, q - 1)
            jy = np.clip((cell_y - by * wc) // wf, 0, q - 1)
            for py in range(q):
                for px in range(q):
                    piece = ext & (jx == px) & (jy == py)
                    if not piece.any():
                        raise ConfigError(
                            "empty fine subdomain (%d, %d) in coarse box %d"
                            % (px, py, len(coarse_masks) - 1)
                        )
                    fext = _mask_from(
                        mesh, extend_by_layers(mesh, piece, layers_f)
                    )
                    pieces.append(fext & ext)
            fine_masks.append(pieces)

    # Multiplicities need the interior dof sets of every subdomain first.
    coarse_idofs = [_interior_dofs(mesh, space, m) for m in coarse_masks]
    fine_idofs = [
        [_interior_dofs(mesh, space, m) for m in fam] for fam in fine_masks
    ]
    mu_c = np.zeros(space.n_dofs, dtype=np.int64)
    for idof in coarse_idofs:
        mu_c[idof] += 1
    mu_f = np.zeros(space.n_dofs, dtype=np.int64)
    for fam in fine_idofs:
        for idof in fam:
            mu_f[idof] += 1
    if np.any(mu_c < 1) or np.any(mu_f < 1):
        raise ConfigError(
            "partition of unity does not cover every dof; increase the "
            "overlap layers"
        )

    coarse = [
        _make_subdomain(mesh, space, m, idof, mu_c)
        for m, idof in zip(coarse_masks, coarse_idofs)
    ]
    fine = [
        [
            _make_subdomain(mesh, space, m, idof, mu_f)
            for m, idof in zip(fam_m, fam_i)
        ]
        for fam_m, fam_i in zip(fine_masks, fine_idofs)
    ]

    cover = np.zeros(mesh.n_triangles, dtype=np.int64)
    for fam in fine_masks:
        for m in fam:
            cover += m
    lam = int(cover.max())
    if cover.min() < 1:
        raise ConfigError("fine subdomains do not cover the mesh")

    return TwoLevelDecomposition(
        coarse=coarse,
        fine=fine,
        coarse_multiplicity=mu_c,
        fine_multiplicity=mu_f,
        Lambda=lam,
        Hc=max(s.diameter for s in coarse),
        Hf=max(s.diameter for fam in fine for s in fam),
        layers_c=int(layers_c),
        layers_f=int(layers_f),
    )


def dump_element_sets(dec):
    """Plain-text dump of all subdomain element sets (one line each)."""
    lines = []
    for i, sub in enumerate(dec.coarse):
        lines.append("c %d : %s" % (i, " ".join(map(str, sub.elements))))
    for i, j, sub in dec.fine_flat():
        lines.append("f %d %d : %s" % (i, j, " ".join(map(str, sub.elements))))
    return "\n".join(lines) + "\n"


def _as_mask(mesh, elements):
    elements = np.asarray(elements)
    if elements.dtype == bool:
        return elements.copy()
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[elements] = True
    return mask


def _mask_from(mesh, indices):
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[indices] = True
    return mask


def _active_dofs(mesh, space, mask):
    verts = np.flatnonzero((mesh.incidence.T @ mask) > 0)
    dofs = space.dof_of_vertex[verts]
    return np.sort(dofs[dofs >= 0])


def _interior_dofs(mesh, space, mask):
    count_in = mesh.incidence.T @ mask.astype(np.int64)
    verts = np.flatnonzero(count_in == mesh.vertex_degree)
    dofs = space.dof_of_vertex[verts]
    return np.sort(dofs[dofs >= 0])


def _make_subdomain(mesh, space, mask, idof, multiplicity):
    ovdof = _active_dofs(mesh, space, mask)
    pos = np.searchsorted(ovdof, idof)
    pou = np.zeros(ovdof.size)
    pou[pos] = 1.0 / multiplicity[idof]
    verts = np.flatnonzero((mesh.incidence.T @ mask) > 0)
    return Subdomain(
        elements=np.flatnonzero(mask),
        element_mask=mask,
        ovdof=ovdof,
        idof=idof,
        idof_in_ov=pos,
        pou=pou,
        diameter=_diameter(mesh.vertices[verts]),
    )


def _diameter(points):
    if points.shape[0] > 256:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            pass
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2)).max())
