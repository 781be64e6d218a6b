"""OBJ and PLY readers/writers for meshes and oriented point clouds.

Only positions and faces are honored on mesh read; other attributes are
skipped. Polygons are triangulated by fan on import. The OBJ writer emits
CCW faces with 9 significant digits; the PLY writer emits binary
little-endian. Point clouds use PLY with nx/ny/nz normal properties.
"""

import struct

import numpy as np

from .mesh import IndexedMesh


def load_mesh(path):
    path = str(path)
    if path.lower().endswith(".obj"):
        return read_obj(path)
    if path.lower().endswith(".ply"):
        return read_ply(path)
    raise ValueError(f"unsupported mesh format: {path}")


def save_mesh(mesh, path):
    path = str(path)
    if path.lower().endswith(".obj"):
        write_obj(mesh, path)
    elif path.lower().endswith(".ply"):
        write_ply(mesh, path)
    else:
        raise ValueError(f"unsupported mesh format: {path}")


def read_obj(path):
    positions = []
    faces = []
    with open(path, "r", errors="replace") as fh:
        for line in fh:
            if line.startswith("v "):
                parts = line.split()
                positions.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif line.startswith("f "):
                idx = []
                for token in line.split()[1:]:
                    i = int(token.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(positions) + i)
                for k in range(1, len(idx) - 1):  # fan triangulation
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not positions:
        raise ValueError(f"no vertices in {path}")
    return IndexedMesh(np.asarray(positions, np.float64),
                       np.asarray(faces, np.int32).reshape(-1, 3))


def write_obj(mesh, path):
    lines = []
    for x, y, z in mesh.positions:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def obj_bytes(mesh):
    """OBJ file contents as bytes (used for byte-identity checks)."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.positions]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return ("\n".join(lines) + "\n").encode()


def _parse_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise ValueError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(proptype, name) or ('list', counttype, itemtype, name)])
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PLY header")
        tokens = line.decode("ascii", "replace").split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[2], tokens[3], tokens[4]))
            else:
                elements[-1][2].append((tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            break
    return fmt, elements


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply_elements(path):
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        data = {}
        if fmt == "ascii":
            for name, count, props in elements:
                rows = []
                for _ in range(count):
                    rows.append(fh.readline().split())
                data[name] = (props, rows)
        else:
            endian = "<" if fmt == "binary_little_endian" else ">"
            for name, count, props in elements:
                rows = []
                if all(p[0] != "list" for p in props):
                    dt = np.dtype([(p[1], endian + _PLY_TYPES[p[0]]) for p in props])
                    arr = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt)
                    rows = arr
                else:
                    for _ in range(count):
                        row = []
                        for p in props:
                            if p[0] == "list":
                                n = np.frombuffer(fh.read(np.dtype(_PLY_TYPES[p[1]]).itemsize),
                                                  dtype=endian + _PLY_TYPES[p[1]])[0]
                                item = np.dtype(_PLY_TYPES[p[2]])
                                row.append(np.frombuffer(fh.read(item.itemsize * int(n)),
                                                         dtype=endian + _PLY_TYPES[p[2]]))
                            else:
                                item = np.dtype(_PLY_TYPES[p[0]])
                                row.append(np.frombuffer(fh.read(item.itemsize),
                                                         dtype=endian + _PLY_TYPES[p[0]])[0])
                        rows.append(row)
                data[name] = (props, rows)
    return fmt, data


def read_ply(path):
    fmt, data = _read_ply_elements(path)
    props, vrows = data["vertex"]
    names = [p[-1] for p in props]
    if fmt == "ascii":
        arr = np.asarray(vrows, dtype=np.float64)
        pos = arr[:, [names.index("x"), names.index("y"), names.index("z")]]
    elif isinstance(vrows, np.ndarray):
        pos = np.stack([vrows["x"], vrows["y"], vrows["z"]], axis=1).astype(np.float64)
    else:
        pos = np.asarray([[r[names.index(c)] for c in "xyz"] for r in vrows], np.float64)
    faces = []
    if "face" in data:
        fprops, frows = data["face"]
        for row in frows:
            if fmt == "ascii":
                idx = [int(t) for t in row[1:]]
            else:
                idx = list(row[0])
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return IndexedMesh(pos, np.asarray(faces, np.int32).reshape(-1, 3))


def write_ply(mesh, path):
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.positions.astype("<f4").tobytes())
        if mesh.n_faces:
            face_dt = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
            rec = np.empty(mesh.n_faces, face_dt)
            rec["n"] = 3
            rec["idx"] = mesh.faces
            fh.write(rec.tobytes())


def write_point_cloud_ply(points, normals, path):
    points = np.asarray(points, np.float64)
    normals = np.asarray(normals, np.float64)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        buf = np.concatenate([points, normals], axis=1).astype("<f4")
        fh.write(buf.tobytes())


def read_point_cloud_ply(path):
    fmt, data = _read_ply_elements(path)
    props, vrows = data["vertex"]
    names = [p[-1] for p in props]
    for c in ("nx", "ny", "nz"):
        if c not in names:
            raise ValueError("point cloud PLY requires nx/ny/nz normal properties")
    cols = ["x", "y", "z", "nx", "ny", "nz"]
    if fmt == "ascii":
        arr = np.asarray(vrows, np.float64)
        sel = arr[:, [names.index(c) for c in cols]]
    elif isinstance(vrows, np.ndarray):
        sel = np.stack([vrows[c] for c in cols], axis=1).astype(np.float64)
    else:
        sel = np.asarray([[r[names.index(c)] for c in cols] for r in vrows], np.float64)
    return sel[:, :3], sel[:, 3:]
