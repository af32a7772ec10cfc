"""Two-subdomain triangle meshes: file format, validation and the channel
generator.

File grammar (``#`` starts a comment, blank lines ignored)::

    hbmesh 1
    nodes N
    x y                 (N lines)
    triangles M
    i j k tag           (M lines, 0-based, tag in {1, 2})
    boundary B
    i j label           (B lines, label in {0, 1, 2})
    periodic P          (optional)
    i j                 (P lines, node i identified with node j)

Label 0 marks the fluid-fluid interface, labels 1 and 2 the walls of the
first and second fluid.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """A mesh invariant does not hold."""


class MeshParseError(MeshError):
    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


@dataclass(eq=False)
class TwoPhaseMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: np.ndarray
    periodic: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    # derived in __post_init__
    rep: np.ndarray = field(init=False, repr=False)
    interface_edges: np.ndarray = field(init=False, repr=False)
    interface_triangles: np.ndarray = field(init=False, repr=False)
    interface_normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.tags = np.asarray(self.tags, dtype=np.int64).reshape(-1)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_labels = np.asarray(self.boundary_labels, dtype=np.int64).reshape(-1)
        self.periodic = np.asarray(self.periodic, dtype=np.int64).reshape(-1, 2)
        _validate(self)
        for a in (self.nodes, self.triangles, self.tags, self.boundary_edges,
                  self.boundary_labels, self.periodic, self.rep, self.interface_edges,
                  self.interface_triangles, self.interface_normals):
            a.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        return _signed_areas(self.nodes, self.triangles)

    def subdomain_area(self, tag: int) -> float:
        return float(self.signed_areas()[self.tags == tag].sum())

    def boundary_measure(self, label: int) -> float:
        e = self.boundary_edges[self.boundary_labels == label]
        return float(np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1).sum())

    def edge_key(self, a: int, b: int) -> tuple:
        """Identity of edge ``(a, b)`` modulo the periodic identification.

        Two physical edges are the same periodic edge when their endpoint
        representatives agree and they have the same edge vector, so coarse
        meshes do not merge distinct edges that wrap around the period.
        """
        ra, rb = int(self.rep[a]), int(self.rep[b])
        if ra > rb or (ra == rb and a > b):
            a, b, ra, rb = b, a, rb, ra
        d = self.nodes[b] - self.nodes[a]
        return (ra, rb, round(float(d[0]), 9) + 0.0, round(float(d[1]), 9) + 0.0)

    def bounding_box(self) -> tuple[float, float, float, float]:
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])

    def same_as(self, other: TwoPhaseMesh) -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("nodes", "triangles", "tags", "boundary_edges", "boundary_labels", "periodic")
        )


def _signed_areas(nodes, tris):
    p0, p1, p2 = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _periodic_representatives(n, pairs):
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            lo, hi = min(ri, rj), max(ri, rj)
            parent[hi] = lo
    return np.array([find(i) for i in range(n)], dtype=np.int64)


def _validate(mesh: TwoPhaseMesh) -> None:
    nodes, tris, tags = mesh.nodes, mesh.triangles, mesh.tags
    n = len(nodes)
    if len(tags) != len(tris):
        raise MeshError("every triangle needs exactly one subdomain tag")
    if len(mesh.boundary_labels) != len(mesh.boundary_edges):
        raise MeshError("every boundary edge needs exactly one label")
    if not np.all(np.isfinite(nodes)):
        raise MeshError("node coordinates must be finite")
    for name, arr in (("triangle", tris), ("boundary edge", mesh.boundary_edges), ("periodic pair", mesh.periodic)):
        bad = np.nonzero((arr < 0) | (arr >= n))[0]
        if len(bad):
            raise MeshError(f"{name} {bad[0]} references a node index outside [0, {n})")
    bad = np.nonzero((tags != 1) & (tags != 2))[0]
    if len(bad):
        raise MeshError(f"unknown subdomain tag {tags[bad[0]]} on triangle {bad[0]}")
    bad = np.nonzero((mesh.boundary_labels < 0) | (mesh.boundary_labels > 2))[0]
    if len(bad):
        raise MeshError(f"unknown boundary label {mesh.boundary_labels[bad[0]]} on boundary edge {bad[0]}")
    area = _signed_areas(nodes, tris)
    bad = np.nonzero(area <= 0)[0]
    if len(bad):
        raise MeshError(f"triangle {bad[0]} has non-positive signed area {area[bad[0]]:.3e}")

    rep = _periodic_representatives(n, mesh.periodic)
    mesh.rep = rep

    adjacency: dict[tuple, list[tuple[int, int]]] = defaultdict(list)
    for t, tri in enumerate(tris):
        if len(set(rep[tri].tolist())) < 3:
            raise MeshError(f"triangle {t} collapses under the periodic identification")
        for k in range(3):
            adjacency[mesh.edge_key(tri[k], tri[(k + 1) % 3])].append((t, k))
    for key, owners in adjacency.items():
        if len(owners) > 2:
            raise MeshError(f"edge {key[:2]} is shared by {len(owners)} triangles (non-manifold mesh)")

    labeled: dict[tuple, tuple[int, int]] = {}
    for e, (a, b) in enumerate(mesh.boundary_edges):
        key = mesh.edge_key(a, b)
        if key in labeled:
            raise MeshError(f"boundary edge {e} duplicates boundary edge {labeled[key][0]}")
        labeled[key] = (e, int(mesh.boundary_labels[e]))
        owners = adjacency.get(key)
        if owners is None:
            raise MeshError(f"boundary edge {e} ({a}, {b}) is not an edge of any triangle")
        label = int(mesh.boundary_labels[e])
        owner_tags = sorted(int(tags[t]) for t, _ in owners)
        if label == 0:
            if owner_tags != [1, 2]:
                raise MeshError(f"boundary edge {e} is labeled 0 but does not separate subdomains 1 and 2")
        else:
            if len(owners) != 1:
                raise MeshError(f"boundary edge {e} is labeled {label} but is interior to the mesh")
            if owner_tags[0] != label:
                raise MeshError(
                    f"boundary edge {e} is labeled {label} but lies on a subdomain-{owner_tags[0]} triangle"
                )

    iface_edges, iface_tris, normals = [], [], []
    for key, owners in adjacency.items():
        if len(owners) == 1:
            if key not in labeled:
                t = owners[0][0]
                raise MeshError(
                    f"edge {key[:2]} of triangle {t} is on the mesh boundary but unlabeled "
                    "(hanging node or missing wall label)"
                )
            continue
        (t0, k0), (t1, k1) = owners
        if tags[t0] == tags[t1]:
            continue
        if key not in labeled or labeled[key][1] != 0:
            raise MeshError(f"interface edge {key[:2]} between triangles {t0} and {t1} is not labeled 0")
        if tags[t0] == 2:
            t0, k0, t1, k1 = t1, k1, t0, k0
        a, b = tris[t0, k0], tris[t0, (k0 + 1) % 3]
        tvec = nodes[b] - nodes[a]
        # counterclockwise triangle: the outward normal of edge (a, b) is (ty, -tx)
        nrm = np.array([tvec[1], -tvec[0]]) / np.hypot(*tvec)
        iface_edges.append((a, b))
        iface_tris.append((t0, t1))
        normals.append(nrm)
    keys = [mesh.edge_key(a, b) for a, b in iface_edges]
    order = np.array(sorted(range(len(keys)), key=keys.__getitem__), dtype=np.int64)
    mesh.interface_edges = np.array(iface_edges, dtype=np.int64).reshape(-1, 2)[order]
    mesh.interface_triangles = np.array(iface_tris, dtype=np.int64).reshape(-1, 2)[order]
    mesh.interface_normals = np.array(normals, dtype=float).reshape(-1, 2)[order]

    for label in (1, 2):
        if not mesh.boundary_measure(label) > 0:
            raise MeshError(f"wall of fluid {label} has zero measure (need meas(Gamma_{label}) > 0)")


def interface_normal(mesh: TwoPhaseMesh, edge: int) -> np.ndarray:
    """Unit normal of interface edge ``edge``, pointing from fluid 1 into fluid 2."""
    if not 0 <= edge < len(mesh.interface_edges):
        raise MeshError(f"edge {edge} is not an interface edge (mesh has {len(mesh.interface_edges)})")
    return mesh.interface_normals[edge].copy()


def interface_length(mesh: TwoPhaseMesh) -> float:
    e = mesh.interface_edges
    return float(np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1).sum())


# -- text format ----------------------------------------------------------

def _tokens(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        toks = []
        pos = 0
        for tok in body.split():
            col = body.index(tok, pos) + 1
            pos = col - 1 + len(tok)
            toks.append((tok, col))
        yield lineno, toks


def _number(tok, lineno, kind):
    text, col = tok
    try:
        return kind(text)
    except ValueError:
        raise MeshParseError(lineno, col, f"expected {'an integer' if kind is int else 'a number'}, got {text!r}") from None


def parse_mesh(text: str) -> TwoPhaseMesh:
    lines = list(_tokens(text))
    pos = 0

    def header(expected, optional=False):
        nonlocal pos
        if pos >= len(lines):
            if optional:
                return None
            last = lines[-1][0] if lines else 1
            raise MeshParseError(last + 1, 1, f"unexpected end of file, expected '{expected}'")
        lineno, toks = lines[pos]
        if toks[0][0] != expected:
            raise MeshParseError(lineno, toks[0][1], f"expected '{expected}', got {toks[0][0]!r}")
        if len(toks) != 2:
            raise MeshParseError(lineno, toks[0][1], f"'{expected}' takes exactly one count")
        count = _number(toks[1], lineno, int)
        if count < 0:
            raise MeshParseError(lineno, toks[1][1], "count must be nonnegative")
        pos += 1
        return count

    def rows(count, width, kinds, what):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(lines):
                last = lines[-1][0] if lines else 1
                raise MeshParseError(last + 1, 1, f"unexpected end of file inside {what} block")
            lineno, toks = lines[pos]
            if len(toks) != width:
                raise MeshParseError(lineno, toks[0][1], f"{what} line needs {width} fields, got {len(toks)}")
            out.append([_number(t, lineno, k) for t, k in zip(toks, kinds)])
            pos += 1
        return out

    if not lines:
        raise MeshParseError(1, 1, "empty mesh file")
    lineno, toks = lines[0]
    if [t for t, _ in toks] != ["hbmesh", "1"]:
        raise MeshParseError(lineno, toks[0][1], "expected header 'hbmesh 1'")
    pos = 1
    nodes = rows(header("nodes"), 2, (float, float), "nodes")
    tris = rows(header("triangles"), 4, (int, int, int, int), "triangles")
    bnd = rows(header("boundary"), 3, (int, int, int), "boundary")
    n_per = header("periodic", optional=True)
    per = rows(n_per, 2, (int, int), "periodic") if n_per is not None else []
    if pos < len(lines):
        lineno, toks = lines[pos]
        raise MeshParseError(lineno, toks[0][1], f"unexpected content {toks[0][0]!r}")
    tris = np.array(tris, dtype=np.int64).reshape(-1, 4)
    bnd = np.array(bnd, dtype=np.int64).reshape(-1, 3)
    return TwoPhaseMesh(
        nodes=np.array(nodes, dtype=float).reshape(-1, 2),
        triangles=tris[:, :3],
        tags=tris[:, 3],
        boundary_edges=bnd[:, :2],
        boundary_labels=bnd[:, 2],
        periodic=np.array(per, dtype=np.int64).reshape(-1, 2),
    )


def write_mesh(mesh: TwoPhaseMesh) -> str:
    out = ["hbmesh 1", f"nodes {mesh.n_nodes}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    out.append(f"triangles {mesh.n_triangles}")
    out += [f"{i} {j} {k} {t}" for (i, j, k), t in zip(mesh.triangles.tolist(), mesh.tags.tolist())]
    out.append(f"boundary {len(mesh.boundary_edges)}")
    out += [f"{i} {j} {lab}" for (i, j), lab in zip(mesh.boundary_edges.tolist(), mesh.boundary_labels.tolist())]
    if len(mesh.periodic):
        out.append(f"periodic {len(mesh.periodic)}")
        out += [f"{i} {j}" for i, j in mesh.periodic.tolist()]
    return "\n".join(out) + "\n"


def read_mesh(path) -> TwoPhaseMesh:
    with open(path, encoding="utf-8") as fh:
        return parse_mesh(fh.read())


# -- generator ------------------------------------------------------------

def generate_channel_mesh(nx: int, ny: int, split: float = 0.5, length: float = 1.0,
                          closure: str = "periodic") -> TwoPhaseMesh:
    """Structured channel ``[0, length] x [0, 1]``, fluid 1 below ``y = split``.

    The interface is snapped to the nearest horizontal grid line.  With
    ``closure="periodic"`` the vertical sides are identified; with
    ``closure="box"`` they are no-slip walls of the adjacent fluid.
    """
    if nx < 2 or ny < 2:
        raise MeshError(f"degenerate resolution nx={nx}, ny={ny} (need at least 2 x 2)")
    if not 0.0 < split < 1.0:
        raise MeshError(f"split must lie in (0, 1), got {split}")
    if closure not in ("periodic", "box"):
        raise MeshError(f"unknown closure {closure!r}")
    js = min(max(int(round(split * ny)), 1), ny - 1)
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    tris, tags = [], []
    for j in range(ny):
        tag = 1 if j < js else 2
        for i in range(nx):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
            tags += [tag, tag]
    bnd = []
    bnd += [(idx(i, 0), idx(i + 1, 0), 1) for i in range(nx)]
    bnd += [(idx(i + 1, ny), idx(i, ny), 2) for i in range(nx)]
    bnd += [(idx(i, js), idx(i + 1, js), 0) for i in range(nx)]
    per = []
    if closure == "box":
        for j in range(ny):
            tag = 1 if j < js else 2
            bnd.append((idx(0, j + 1), idx(0, j), tag))
            bnd.append((idx(nx, j), idx(nx, j + 1), tag))
    else:
        per = [(idx(nx, j), idx(0, j)) for j in range(ny + 1)]
    bnd = np.array(bnd, dtype=np.int64)
    return TwoPhaseMesh(nodes, np.array(tris), np.array(tags), bnd[:, :2], bnd[:, 2],
                        np.array(per, dtype=np.int64).reshape(-1, 2))


def rotated(mesh: TwoPhaseMesh, theta: float) -> TwoPhaseMesh:
    """Copy of ``mesh`` rotated by ``theta`` about the origin."""
    c, s = np.cos(theta), np.sin(theta)
    nodes = mesh.nodes @ np.array([[c, s], [-s, c]])
    return TwoPhaseMesh(nodes, mesh.triangles, mesh.tags, mesh.boundary_edges,
                        mesh.boundary_labels, mesh.periodic)


def channel_split_height(mesh: TwoPhaseMesh) -> float:
    """Height of a horizontal interface (channel meshes only)."""
    ys = mesh.nodes[mesh.interface_edges.ravel(), 1]
    if len(ys) == 0 or np.ptp(ys) > 1e-12:
        raise MeshError("mesh interface is not a horizontal line")
    return float(ys[0])
