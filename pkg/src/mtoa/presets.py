"""Built-in benchmark problems: cantilever, bridge, L-bracket and 3D multi-load.

Loads act on small node patches (3 nodes in 2D, 3x3 in 3D) split evenly, and
magnitudes are unitless.  Grids have unit element size.
"""
from __future__ import annotations

import difflib

import numpy as np

from .model import ConfigError


def _node(nelx, nely, ix, iy, iz=0):
    return (iz * (nely + 1) + iy) * (nelx + 1) + ix


def _patch_2d(nelx, nely, ix, iy, axis, total, along):
    """Spread ``total`` over three nodes centred on (ix, iy), stepping along ``along``."""
    loads = {}
    for s in (-1, 0, 1):
        jx, jy = (ix + s, iy) if along == "x" else (ix, iy + s)
        dof = 2 * _node(nelx, nely, jx, jy) + axis
        loads[str(dof)] = loads.get(str(dof), 0.0) + total / 3.0
    return loads


def cantilever2d(nelx=120, nely=60):
    """Left edge clamped, downward unit load at mid-height of the right edge."""
    fixed = [2 * _node(nelx, nely, 0, iy) + a for iy in range(nely + 1) for a in (0, 1)]
    load = _patch_2d(nelx, nely, nelx, nely // 2, 1, -1.0, "y")
    mesh = {"dim": 2, "nelx": nelx, "nely": nely, "element_size": 1.0,
            "fixed_dofs": fixed, "load_cases": [load]}
    return {"mesh": mesh, "optimization": {"K": 3}}


def bridge2d(nelx=120, nely=60):
    """Lower-left corner pinned, lower-right on a roller; bottom loads 2 (x = L/3) and 1 (x = 2L/3)."""
    fixed = [2 * _node(nelx, nely, 0, 0), 2 * _node(nelx, nely, 0, 0) + 1,
             2 * _node(nelx, nely, nelx, 0) + 1]
    load = _patch_2d(nelx, nely, nelx // 3, 0, 1, -2.0, "x")
    for dof, v in _patch_2d(nelx, nely, 2 * nelx // 3, 0, 1, -1.0, "x").items():
        load[dof] = load.get(dof, 0.0) + v
    mesh = {"dim": 2, "nelx": nelx, "nely": nely, "element_size": 1.0,
            "fixed_dofs": fixed, "load_cases": [load]}
    return {"mesh": mesh, "optimization": {"K": 2}}


def lbracket2d(nelx=80, nely=80):
    """L-shape (upper-right 60% block removed); top edge clamped, tip load down."""
    cx, cy = int(round(0.4 * nelx)), int(round(0.4 * nely))
    fixed = [2 * _node(nelx, nely, ix, nely) + a for ix in range(cx + 1) for a in (0, 1)]
    load = _patch_2d(nelx, nely, nelx, cy - 2, 1, -1.0, "y")
    mesh = {"dim": 2, "nelx": nelx, "nely": nely, "element_size": 1.0,
            "fixed_dofs": fixed, "load_cases": [load],
            "void_boxes": [[cx, nelx, cy, nely]]}
    return {"mesh": mesh, "optimization": {"K": 3}}


def multiload3d(nelx=24, nely=None, nelz=None):
    """Cube with faces x=0, y=0, z=0 clamped and three separate shear loads.

    Case 1 pushes +y on face x=L, case 2 +z on face y=L, case 3 +x on face z=L,
    each over a centred 3x3 node patch, so the setup is cyclically symmetric.
    """
    n = nelx
    nely = n if nely is None else nely
    nelz = n if nelz is None else nelz
    fixed = set()
    for iz in range(nelz + 1):
        for iy in range(nely + 1):
            for ix in range(nelx + 1):
                if ix == 0 or iy == 0 or iz == 0:
                    node = _node(nelx, nely, ix, iy, iz)
                    fixed.update(3 * node + a for a in range(3))
    cases = []
    mids = (nelx // 2, nely // 2, nelz // 2)
    ends = (nelx, nely, nelz)
    for face_axis, force_axis in ((0, 1), (1, 2), (2, 0)):
        load = {}
        other = [a for a in range(3) if a != face_axis]
        for s in (-1, 0, 1):
            for t in (-1, 0, 1):
                idx = list(mids)
                idx[face_axis] = ends[face_axis]
                idx[other[0]] += s
                idx[other[1]] += t
                dof = 3 * _node(nelx, nely, *idx) + force_axis
                load[str(dof)] = 1.0 / 9.0
        cases.append(load)
    mesh = {"dim": 3, "nelx": nelx, "nely": nely, "nelz": nelz, "element_size": 1.0,
            "fixed_dofs": sorted(fixed), "load_cases": cases}
    return {"mesh": mesh, "optimization": {"K": 3}}


PRESETS = {
    "cantilever2d": cantilever2d,
    "bridge2d": bridge2d,
    "lbracket2d": lbracket2d,
    "multiload3d": multiload3d,
}


def unknown_preset(name: str) -> ConfigError:
    close = difflib.get_close_matches(name, PRESETS, n=3, cutoff=0.3)
    hint = f"; did you mean {', '.join(close)}?" if close else f"; known: {', '.join(PRESETS)}"
    return ConfigError(f"unknown preset {name!r}{hint}", "preset")


def preset_document(name: str, **mesh_args) -> dict:
    if name not in PRESETS:
        raise unknown_preset(name)
    try:
        return PRESETS[name](**mesh_args)
    except TypeError as exc:
        raise ConfigError(str(exc), "mesh") from exc


def describe(name: str) -> str:
    return " ".join(PRESETS[name].__doc__.split())


def load_node_positions(mesh) -> np.ndarray:
    """Coordinates of every loaded node (all cases), for plotting and checks."""
    nodes = sorted({d // mesh.dim for lc in mesh.load_cases for d in lc})
    nx, ny = mesh.nelx + 1, mesh.nely + 1
    return np.array([(n % nx, (n // nx) % ny, n // (nx * ny)) for n in nodes], dtype=float)
