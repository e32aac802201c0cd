"""Writers for run outputs: legacy VTK, PGM previews, components, build vectors, snapshots."""
from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from .model import DesignState, problem_document

SOLID_THRESHOLD = 0.5


def config_hash(problem) -> str:
    """SHA-256 of the canonical expanded problem document."""
    doc = problem_document(problem)
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_vtk(path, mesh, arrays: dict, title: str = "mtoa fields") -> None:
    """Legacy ASCII STRUCTURED_POINTS file with one CELL_DATA scalar per array."""
    dims = [mesh.nelx + 1, mesh.nely + 1, (mesh.nelz + 1) if mesh.dim == 3 else 1]
    h = float(mesh.element_size)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             "DIMENSIONS {} {} {}".format(*dims), "ORIGIN 0 0 0",
             f"SPACING {h!r} {h!r} {h!r}", f"CELL_DATA {mesh.n_elements}"]
    for name, values in arrays.items():
        values = np.asarray(values, dtype=float).ravel()
        if values.size != mesh.n_elements:
            raise ValueError(f"array {name!r} has {values.size} values for {mesh.n_elements} cells")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [" ".join(repr(float(v)) for v in values[i:i + 9]) for i in range(0, values.size, 9)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> tuple[dict, dict]:
    """Parse a file written by :func:`write_vtk`; returns (header, arrays)."""
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile"):
        raise ValueError("not a legacy VTK file")
    header = {"title": tokens[1], "format": tokens[2].strip(), "dataset": tokens[3].split()[1]}
    body = " ".join(tokens[4:]).split()
    arrays, i = {}, 0
    while i < len(body):
        key = body[i]
        if key == "DIMENSIONS":
            header["dimensions"] = tuple(int(v) for v in body[i + 1:i + 4])
            i += 4
        elif key in ("ORIGIN", "SPACING"):
            header[key.lower()] = tuple(float(v) for v in body[i + 1:i + 4])
            i += 4
        elif key == "CELL_DATA":
            header["cells"] = int(body[i + 1])
            i += 2
        elif key == "SCALARS":
            name = body[i + 1]
            i += 6  # SCALARS name type ncomp LOOKUP_TABLE default
            n = header["cells"]
            arrays[name] = np.array(body[i:i + n], dtype=float)
            i += n
        else:
            raise ValueError(f"unexpected token {key!r}")
    expected = int(np.prod([max(d - 1, 1) for d in header["dimensions"]]))
    if header.get("cells") != expected:
        raise ValueError("cell count does not match dimensions")
    return header, arrays


def pgm_pixels(values, mesh) -> np.ndarray:
    """8-bit image, row 0 at the top (largest y); 3D uses the mid z-slice."""
    grid = np.asarray(values, dtype=float).reshape(mesh.shape)
    if mesh.dim == 3:
        grid = grid[mesh.nelz // 2]
    return np.rint(255.0 * np.clip(grid[::-1], 0.0, 1.0)).astype(np.uint8)


def write_pgm(path, values, mesh) -> None:
    img = pgm_pixels(values, mesh)
    rows = [" ".join(str(v) for v in row) for row in img]
    Path(path).write_text(f"P2\n{img.shape[1]} {img.shape[0]}\n255\n" + "\n".join(rows) + "\n")


def component_labels(weights: np.ndarray, rho_tilde: np.ndarray, mask) -> np.ndarray:
    """0 for void, else 1 + argmax_k w_k."""
    labels = 1 + np.argmax(weights, axis=1)
    solid = (rho_tilde > SOLID_THRESHOLD) & np.asarray(mask, dtype=bool)
    return np.where(solid, labels, 0)


def write_components(path, labels: np.ndarray, K: int) -> None:
    counts = [int(np.sum(labels == k)) for k in range(K + 1)]
    head = [f"# element component labels: 0 = void, 1..{K} = component",
            "# counts " + " ".join(f"{k}:{c}" for k, c in enumerate(counts))]
    Path(path).write_text("\n".join(head + [str(int(v)) for v in labels]) + "\n")


def write_build_vectors(path, vectors) -> None:
    lines = ["# component px py pz rank_deficient ambiguous"]
    for k, bv in enumerate(vectors, start=1):
        p = bv.vector
        x, y, z = (float(v) for v in p)
        lines.append(f"{k} {x!r} {y!r} {z!r} {int(bv.rank_deficient)} {int(bv.ambiguous)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_build_vectors(path) -> np.ndarray:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return np.array([[float(v) for v in r[1:4]] for r in rows])


def field_arrays(evaluator, ev) -> dict:
    """All per-element fields worth exporting from one evaluation."""
    ff = ev.filtered
    K = ev.weights.shape[1]
    arrays = {"rho": ev.state.rho, "rho_tilde": ff.rho_tilde}
    for k in range(K):
        arrays[f"membership_{k + 1}"] = ff.m_tilde[:, k]
        arrays[f"weight_{k + 1}"] = ev.weights[:, k]
    arrays["interface"] = ev.interface.I
    arrays["von_mises"] = np.max(ev.von_mises, axis=0)
    arrays["component"] = component_labels(ev.weights, ff.rho_tilde, evaluator.mesh.domain_mask)
    return arrays


def snapshot(problem, state: DesignState, seed: int, schedule) -> dict:
    return {"problem": problem_document(problem), "state": state.to_dict(), "seed": int(seed),
            "beta": float(schedule.beta)}


def environment() -> dict:
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def write_bundle(out_dir, problem, evaluator, ev, record=None, extra: dict | None = None,
                 previews: bool = True) -> dict:
    """Write every output file for one evaluated design; returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = problem.mesh
    arrays = field_arrays(evaluator, ev)
    write_vtk(out / "fields.vtk", mesh, arrays)
    header, back = read_vtk(out / "fields.vtk")
    if header["cells"] != mesh.n_elements or set(back) != set(arrays):
        raise OSError("VTK self-check failed")
    write_components(out / "components.txt", arrays["component"], ev.weights.shape[1])
    vectors = evaluator.build_vectors(ev)
    write_build_vectors(out / "build_vectors.txt", vectors)
    if previews:
        write_pgm(out / "rho_tilde.pgm", ev.filtered.rho_tilde, mesh)
        write_pgm(out / "interface.pgm", ev.interface.I, mesh)
    seed = record.seed if record is not None else (extra or {}).get("seed", 0)
    write_json(out / "state.json", snapshot(problem, ev.state, seed, ev.schedule))
    diag = evaluator.diagnostics(ev)
    summary = {"F": ev.F, "g1": ev.g1, "g2": ev.g2, **diag, "seed": seed,
               "config_hash": config_hash(problem), "versions": environment(),
               "build_vectors": [bv.vector.tolist() for bv in vectors]}
    if record is not None:
        (out / "history.csv").write_text(record.to_csv())
        summary.update(status=record.status, message=record.message,
                       iterations=len(record.history), wall_time=record.wall_time,
                       selected_iteration=record.final["iter"])
    summary.update(extra or {})
    write_json(out / "summary.json", summary)
    return summary
