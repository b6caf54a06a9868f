"""Minimal PLY reader/writer for point clouds and Gaussian exports.

Supports ascii and binary_little_endian vertex elements with scalar
properties, which covers COLMAP-style inputs (x,y,z + uchar r,g,b) and our
own double-precision Gaussian exports.
"""

from __future__ import annotations

import numpy as np

_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2",
    "int": "i4", "uint": "u4", "float": "f4", "double": "f8",
    "int8": "i1", "uint8": "u1", "int16": "i2", "uint16": "u2",
    "int32": "i4", "uint32": "u4", "float32": "f4", "float64": "f8",
}
_INV_TYPES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


def read_ply(path) -> dict[str, np.ndarray]:
    """Read the vertex element of a PLY file into per-property arrays."""
    with open(path, "rb") as fh:
        line = fh.readline().strip()
        if line != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = None
        count = 0
        props: list[tuple[str, str]] = []
        in_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            tokens = line.decode("ascii").strip().split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    count = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise ValueError(f"{path}: list properties not supported")
                props.append((tokens[2], _PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise ValueError(f"{path}: unsupported format {fmt}")
        if fmt == "binary_little_endian":
            dtype = np.dtype([(name, "<" + code) for name, code in props])
            data = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
        else:
            raw = np.loadtxt(fh, max_rows=count, ndmin=2)
            data = {name: raw[:, i] for i, (name, _) in enumerate(props)}
            return {name: np.asarray(data[name]) for name, _ in props}
    return {name: np.ascontiguousarray(data[name]) for name, _ in props}


def write_ply(path, columns: list[tuple[str, str, np.ndarray]]) -> None:
    """Write a binary little-endian vertex-only PLY.

    ``columns`` is a list of (property name, numpy dtype code, values).
    """
    count = len(columns[0][2])
    dtype = np.dtype([(name, "<" + code) for name, code, _ in columns])
    rec = np.empty(count, dtype=dtype)
    for name, code, values in columns:
        rec[name] = np.asarray(values).astype(code)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    header += [f"property {_INV_TYPES[code]} {name}" for name, code, _ in columns]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_point_cloud(path) -> tuple[np.ndarray, np.ndarray]:
    """Load positions and RGB colors in [0,1] from a PLY point cloud."""
    data = read_ply(path)
    for axis in ("x", "y", "z"):
        if axis not in data:
            raise ValueError(f"{path}: missing '{axis}' property")
    positions = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    if positions.shape[0] == 0:
        raise ValueError(f"{path}: empty point cloud")
    names = ("red", "green", "blue") if "red" in data else ("r", "g", "b")
    if names[0] in data:
        cols = np.stack([data[n] for n in names], axis=1).astype(np.float64)
        if cols.max(initial=0.0) > 1.0:
            cols = cols / 255.0
    else:
        cols = np.full((positions.shape[0], 3), 0.5)
    return positions, np.clip(cols, 0.0, 1.0)


def write_point_cloud(path, positions: np.ndarray, colors: np.ndarray) -> None:
    """Write a COLMAP-style cloud (float positions, uchar colors)."""
    cols = np.clip(np.asarray(colors) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    write_ply(path, [
        ("x", "f4", positions[:, 0]), ("y", "f4", positions[:, 1]), ("z", "f4", positions[:, 2]),
        ("red", "u1", cols[:, 0]), ("green", "u1", cols[:, 1]), ("blue", "u1", cols[:, 2]),
    ])
