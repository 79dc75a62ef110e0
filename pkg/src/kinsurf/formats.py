"""Readers and writers for oriented point clouds and polylines.

Supported inputs are OBJ (``v``/``vn``/``f``), ASCII PLY and plain XYZN
rows.  Files written here carry a ``# counts`` comment so that truncated
copies are rejected instead of loading as a smaller cloud.
"""
from __future__ import annotations

import enum
import logging
import os
import sys
from typing import Optional

import numpy as np

from .cloud import PointCloud
from .errors import EmptySlab, IoError, NoNormalsDerivable, ParseError
from .field import Polyline, PolylineKind

log = logging.getLogger(__name__)


class CloudFormat(str, enum.Enum):
    OBJ = "obj"
    PLY = "ply"
    XYZN = "xyzn"


_EXTENSIONS = {".obj": CloudFormat.OBJ, ".ply": CloudFormat.PLY, ".xyzn": CloudFormat.XYZN, ".xyz": CloudFormat.XYZN}


def sniff_format(text: str, path: Optional[str] = None) -> CloudFormat:
    if path:
        ext = os.path.splitext(str(path))[1].lower()
        if ext in _EXTENSIONS:
            return _EXTENSIONS[ext]
    for line in text.splitlines():
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s == "ply":
            return CloudFormat.PLY
        if s.split()[0] in ("v", "vn", "f", "o", "g", "vt", "s", "mtllib", "usemtl"):
            return CloudFormat.OBJ
        return CloudFormat.XYZN
    raise ParseError("empty input")


def _floats(tokens, lineno, what="number"):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"bad {what}: {' '.join(tokens)!r}", lineno) from None
    if not all(np.isfinite(vals)):
        raise ParseError(f"non-finite {what}", lineno)
    return vals


def _parse_counts(s: str, lineno: int) -> dict:
    """``# counts key value ...`` integrity comment."""
    tok = s[1:].split()
    if not tok or tok[0] != "counts":
        return {}
    body = tok[1:]
    if len(body) % 2:
        raise ParseError("malformed counts comment", lineno)
    try:
        return {k: int(v) for k, v in zip(body[::2], body[1::2])}
    except ValueError:
        raise ParseError("malformed counts comment", lineno) from None


def _check_terminated(text: str):
    # with declared counts a missing final newline means a cut inside the
    # last record, which could otherwise parse as a shorter number
    if text and not text.endswith("\n"):
        raise ParseError("last record is not terminated (truncated file?)", text.count("\n") + 1)


def _check_counts(expected: dict, found: dict):
    for key, n in expected.items():
        if key in found and found[key] != n:
            raise ParseError(f"expected {n} {key} records, found {found[key]} (truncated file?)")


def _unit_rows(normals, lines=None):
    nn = np.linalg.norm(normals, axis=1)
    bad = np.flatnonzero(~(nn > 0))
    if len(bad):
        raise ParseError("zero-length normal", None if lines is None else lines[bad[0]])
    return normals / nn[:, None]


def _area_weighted_normals(positions, faces):
    """Per-vertex sums of unnormalized face normals (|cross| = 2 * area)."""
    acc = np.zeros_like(positions)
    skipped = 0
    for tri in faces:
        a, b, c = positions[tri[0]], positions[tri[1]], positions[tri[2]]
        fn = np.cross(b - a, c - a)
        if len(set(tri)) < 3 or not np.linalg.norm(fn) > 0:
            skipped += 1
            continue
        for i in tri:
            acc[i] += fn
    return acc, skipped


def _finish(positions, normals, meta):
    """Drop vertices without a usable normal and renormalize the rest."""
    nn = np.linalg.norm(normals, axis=1)
    ok = nn > 1e-300
    if not ok.any():
        raise NoNormalsDerivable("no vertex has a usable normal")
    if not ok.all():
        meta["dropped_vertices"] = int((~ok).sum())
        log.warning("dropped %d vertices without a normal", meta["dropped_vertices"])
    if meta.get("degenerate_faces"):
        log.warning("skipped %d degenerate faces", meta["degenerate_faces"])
    return PointCloud(positions[ok], normals[ok] / nn[ok, None], meta=meta)


def _obj_index(tok, n, lineno):
    try:
        i = int(tok)
    except ValueError:
        raise ParseError(f"bad index {tok!r}", lineno) from None
    i = i - 1 if i > 0 else n + i
    if not 0 <= i < n:
        raise ParseError(f"index {tok} out of range", lineno)
    return i


def parse_obj(text: str) -> PointCloud:
    verts, vnorms, faces, face_vn = [], [], [], []
    expected = {}
    face_records = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            expected.update(_parse_counts(s, lineno))
            continue
        tok = s.split()
        key = tok[0]
        if key == "v":
            if len(tok) < 4:
                raise ParseError("vertex needs 3 coordinates", lineno)
            verts.append(_floats(tok[1:4], lineno, "vertex"))
        elif key == "vn":
            if len(tok) != 4:
                raise ParseError("normal needs 3 components", lineno)
            vnorms.append(_floats(tok[1:4], lineno, "normal"))
        elif key == "f":
            if len(tok) < 4:
                raise ParseError("face needs at least 3 vertices", lineno)
            face_records += 1
            vi, ni = [], []
            for corner in tok[1:]:
                parts = corner.split("/")
                vi.append(_obj_index(parts[0], len(verts), lineno))
                if len(parts) == 3 and parts[2]:
                    ni.append(_obj_index(parts[2], len(vnorms), lineno))
            # fan triangulation of polygons
            for k in range(1, len(vi) - 1):
                faces.append((vi[0], vi[k], vi[k + 1]))
                if len(ni) == len(vi):
                    face_vn.append((ni[0], ni[k], ni[k + 1]))
                else:
                    face_vn.append(None)
        # other records (vt, o, g, s, usemtl, ...) carry nothing we need
    if expected:
        _check_terminated(text)
    _check_counts(expected, {"v": len(verts), "vn": len(vnorms), "f": face_records})
    if not verts:
        raise ParseError("no vertices")
    pos = np.array(verts)
    meta = {"format": CloudFormat.OBJ.value, "faces": len(faces)}
    vn = np.array(vnorms).reshape(-1, 3)
    if len(vn) and any(f is not None for f in face_vn):
        # normals matched through face corners; a vertex shared by corners
        # with different normals gets their average
        acc = np.zeros_like(pos)
        for tri, ntri in zip(faces, face_vn):
            if ntri is None:
                continue
            for i, j in zip(tri, ntri):
                acc[i] += vn[j] / np.linalg.norm(vn[j]) if np.linalg.norm(vn[j]) > 0 else 0.0
        return _finish(pos, acc, meta)
    if len(vn) and not faces:
        if len(vn) != len(pos):
            raise ParseError(f"{len(pos)} vertices but {len(vn)} normals and no faces")
        return _finish(pos, vn, meta)
    if not faces:
        raise NoNormalsDerivable("OBJ without normals or faces")
    acc, skipped = _area_weighted_normals(pos, faces)
    meta["degenerate_faces"] = skipped
    return _finish(pos, acc, meta)


_PLY_SCALARS = {"char", "uchar", "short", "ushort", "int", "uint", "float", "double",
                "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64"}


def parse_ply(text: str) -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    elements = []  # [name, count, [(prop, is_list)]]
    fmt_seen = False
    i = 1
    while True:
        if i >= len(lines):
            raise ParseError("header not terminated by end_header", i)
        lineno = i + 1
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            if len(tok) != 3:
                raise ParseError("malformed format line", lineno)
            if tok[1] != "ascii":
                raise ParseError(f"unsupported PLY format {tok[1]!r} (ASCII only)", lineno)
            fmt_seen = True
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError("malformed element line", lineno)
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno)
            if len(tok) == 3 and tok[1] in _PLY_SCALARS:
                elements[-1][2].append((tok[2], False))
            elif len(tok) == 5 and tok[1] == "list" and tok[2] in _PLY_SCALARS and tok[3] in _PLY_SCALARS:
                elements[-1][2].append((tok[4], True))
            else:
                raise ParseError("malformed property line", lineno)
        else:
            raise ParseError(f"unknown header keyword {tok[0]!r}", lineno)
    if not fmt_seen:
        raise ParseError("missing format line")
    _check_terminated(text)

    data = [(k + 1, ln.split()) for k, ln in enumerate(lines[i:], start=i) if ln.strip()]
    pos_in = 0
    verts = normals = None
    faces = []
    for name, count, props in elements:
        if pos_in + count > len(data):
            raise ParseError(f"element {name!r}: expected {count} rows, found {len(data) - pos_in}")
        rows = data[pos_in:pos_in + count]
        pos_in += count
        if name == "vertex":
            names = [p for p, is_list in props]
            if any(is_list for _, is_list in props) or not {"x", "y", "z"} <= set(names):
                raise ParseError("vertex element needs scalar x, y, z properties")
            vals = []
            for lineno, tok in rows:
                if len(tok) != len(names):
                    raise ParseError(f"expected {len(names)} values, found {len(tok)}", lineno)
                vals.append(_floats(tok, lineno, "vertex value"))
            arr = np.array(vals).reshape(-1, len(names))
            verts = arr[:, [names.index(c) for c in "xyz"]]
            if {"nx", "ny", "nz"} <= set(names):
                normals = arr[:, [names.index(c) for c in ("nx", "ny", "nz")]]
                normal_lines = [ln for ln, _ in rows]
        elif name == "face":
            if len(props) != 1 or not props[0][1]:
                raise ParseError("face element needs a single list property")
            for lineno, tok in rows:
                try:
                    idx = [int(t) for t in tok]
                except ValueError:
                    raise ParseError("bad face index", lineno) from None
                if not idx or idx[0] < 3 or len(idx) != idx[0] + 1:
                    raise ParseError("face list length mismatch", lineno)
                for k in range(2, idx[0]):
                    faces.append((idx[1], idx[k], idx[k + 1]))
    if pos_in != len(data):
        raise ParseError("data beyond the declared elements", data[pos_in][0])
    if verts is None or not len(verts):
        raise ParseError("no vertex element")
    n = len(verts)
    if any(not 0 <= j < n for f in faces for j in f):
        raise ParseError("face index out of range")
    meta = {"format": CloudFormat.PLY.value, "faces": len(faces)}
    if normals is not None:
        return PointCloud(verts, _unit_rows(normals, normal_lines), meta=meta)
    if not faces:
        raise NoNormalsDerivable("PLY without normals or faces")
    acc, skipped = _area_weighted_normals(verts, faces)
    meta["degenerate_faces"] = skipped
    return _finish(verts, acc, meta)


def parse_xyzn(text: str) -> PointCloud:
    rows, lines = [], []
    expected = {}
    ncols = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            expected.update(_parse_counts(s, lineno))
            continue
        tok = s.replace(",", " ").split()
        if ncols is None:
            ncols = len(tok)
        if ncols == 3:
            if len(tok) != 3:
                raise ParseError(f"expected 3 columns, found {len(tok)}", lineno)
            continue
        if len(tok) != 6:
            raise ParseError(f"expected 6 columns, found {len(tok)}", lineno)
        rows.append(_floats(tok, lineno))
        lines.append(lineno)
    if expected:
        _check_terminated(text)
    if ncols == 3:
        # reported only for complete files, a cut row is a truncation
        raise NoNormalsDerivable("point-only XYZ file: no normals and no faces")
    _check_counts(expected, {"points": len(rows)})
    if not rows:
        raise ParseError("no points")
    arr = np.array(rows)
    return PointCloud(arr[:, :3], _unit_rows(arr[:, 3:], lines), meta={"format": CloudFormat.XYZN.value})


_PARSERS = {CloudFormat.OBJ: parse_obj, CloudFormat.PLY: parse_ply, CloudFormat.XYZN: parse_xyzn}


def _read_text(path) -> str:
    try:
        if str(path) == "-":
            return sys.stdin.read()
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except UnicodeDecodeError as exc:
        raise ParseError(f"not a text file: {exc}") from None


def load_cloud(path, format=None) -> PointCloud:
    """Read an oriented point cloud; the format is sniffed when not given."""
    text = _read_text(path)
    fmt = CloudFormat(format) if format else sniff_format(text, None if str(path) == "-" else path)
    cloud = _PARSERS[fmt](text)
    cloud.meta["source"] = str(path)
    return cloud


def _fmt(x) -> str:
    return format(float(x), ".17g")


def cloud_to_text(cloud: PointCloud, format=CloudFormat.XYZN) -> str:
    fmt = CloudFormat(format)
    n = len(cloud)
    rows = [" ".join(_fmt(v) for v in np.concatenate([p, q])) for p, q in zip(cloud.positions, cloud.normals)]
    if fmt is CloudFormat.XYZN:
        return "".join([f"# counts points {n}\n"] + [r + "\n" for r in rows])
    if fmt is CloudFormat.PLY:
        head = ["ply", "format ascii 1.0", f"element vertex {n}"]
        head += [f"property double {c}" for c in ("x", "y", "z", "nx", "ny", "nz")]
        head.append("end_header")
        return "\n".join(head + rows) + "\n"
    out = [f"# counts v {n} vn {n} f 0\n"]
    out += ["v " + " ".join(_fmt(v) for v in p) + "\n" for p in cloud.positions]
    out += ["vn " + " ".join(_fmt(v) for v in q) + "\n" for q in cloud.normals]
    return "".join(out)


def _write_text(path, text: str):
    try:
        if str(path) == "-":
            sys.stdout.write(text)
            sys.stdout.flush()
            return
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def save_cloud(cloud: PointCloud, path, format=None):
    if format is None:
        ext = os.path.splitext(str(path))[1].lower()
        format = _EXTENSIONS.get(ext, CloudFormat.XYZN)
    _write_text(path, cloud_to_text(cloud, format))


def select_seed(cloud: PointCloud, plane_point, plane_normal, thickness: Optional[float] = None) -> np.ndarray:
    """Centroid of the points within ``thickness / 2`` of a plane.

    The default thickness is 2% of the bounding-box diagonal.
    """
    p0 = np.asarray(plane_point, dtype=float).reshape(3)
    n = np.asarray(plane_normal, dtype=float).reshape(3)
    nn = np.linalg.norm(n)
    if not nn > 0:
        raise ValueError("plane normal must be non-zero")
    if thickness is None:
        lo, hi = cloud.bounds()
        thickness = 0.02 * float(np.linalg.norm(hi - lo))
    if not thickness > 0:
        raise ValueError("thickness must be positive")
    d = (cloud.positions - p0) @ (n / nn)
    inside = np.abs(d) <= 0.5 * thickness
    if inside.sum() < 3:
        raise EmptySlab(f"only {int(inside.sum())} points in the slab")
    return cloud.positions[inside].mean(axis=0)


# -- polylines ------------------------------------------------------------

def polylines_to_vtk(lines, frame=None) -> str:
    pts = [l.points if frame is None else frame.invert(l.points) for l in lines]
    total = sum(len(p) for p in pts)
    out = ["# vtk DataFile Version 3.0", "kinsurf polylines", "ASCII", "DATASET POLYDATA",
           f"POINTS {total} double"]
    out += [" ".join(_fmt(v) for v in row) for p in pts for row in p]
    out.append(f"LINES {len(pts)} {total + len(pts)}")
    start = 0
    for p in pts:
        out.append(" ".join(str(k) for k in [len(p)] + list(range(start, start + len(p)))))
        start += len(p)
    out += [f"CELL_DATA {len(pts)}", "SCALARS kind int 1", "LOOKUP_TABLE default"]
    out += [str(int(l.kind)) for l in lines]
    return "\n".join(out) + "\n"


def export_polylines(lines, path, frame=None):
    """Write polylines as legacy ASCII VTK polydata in input units.

    ``frame`` maps the polyline coordinates back to input units; the kind of
    each line is stored as an integer cell scalar.
    """
    lines = list(lines)
    if not lines:
        raise IoError("no polylines to write")
    _write_text(path, polylines_to_vtk(lines, frame))


def read_polylines(path) -> list:
    """Parse the files written by :func:`export_polylines`."""
    tok = _read_text(path).split("\n")
    tok = [t.strip() for t in tok]
    it = iter(enumerate(tok, 1))
    pts = kinds = None
    conn = []
    for lineno, line in it:
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            rows = [_floats(next(it)[1].split(), lineno + k + 1) for k in range(n)]
            pts = np.array(rows).reshape(-1, 3)
        elif line.startswith("LINES"):
            nl = int(line.split()[1])
            for _ in range(nl):
                ln, row = next(it)
                ids = [int(v) for v in row.split()]
                if len(ids) != ids[0] + 1:
                    raise ParseError("connectivity length mismatch", ln)
                conn.append(ids[1:])
        elif line.startswith("LOOKUP_TABLE") and conn:
            kinds = [int(next(it)[1]) for _ in conn]
    if pts is None:
        raise ParseError("no POINTS block")
    kinds = kinds or [int(PolylineKind.STREAMLINE)] * len(conn)
    return [Polyline(pts[ids], PolylineKind(k)) for ids, k in zip(conn, kinds)]
