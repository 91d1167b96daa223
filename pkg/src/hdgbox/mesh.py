"""Cartesian cuboid meshes with direction-wise face storage.

Elements are ordered lexicographically with the x1 index fastest.  Faces are
grouped by their normal direction d in {0, 1, 2}; within a direction they are
ordered lexicographically over (plane, tangential element indices) with the
lowest-numbered coordinate fastest.  A face block holds (p+1)^2 coefficients
over its two tangential directions, lower coordinate axis first.

Trace unknowns live on interior and Neumann faces only; Dirichlet faces carry
fixed boundary data in the same storage.
"""

import numpy as np

__all__ = [
    "INTERIOR",
    "DIRICHLET",
    "NEUMANN",
    "Mesh",
    "ElementGeometry",
    "FluxField",
    "build_mesh",
    "gather",
    "scatter_add",
    "pack_unknowns",
    "unpack_unknowns",
    "pack_all",
    "unpack_all",
]

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

_BC_KINDS = {"dirichlet": DIRICHLET, "neumann": NEUMANN}


class ElementGeometry:
    """Metric coefficients of one cuboid element.

    alpha0 = h1 h2 h3 / 8 (volume of the reference-to-physical map) and
    alpha_i = alpha0 * (2 / h_i)^2.  On a uniform mesh a single instance is
    shared by every element.
    """

    def __init__(self, h):
        h1, h2, h3 = (float(v) for v in h)
        if min(h1, h2, h3) <= 0.0:
            raise ValueError("element widths must be positive")
        self.half_widths = (0.5 * h1, 0.5 * h2, 0.5 * h3)
        self.alpha0 = h1 * h2 * h3 / 8.0
        self.alphas = (
            self.alpha0 * (2.0 / h1) ** 2,
            self.alpha0 * (2.0 / h2) ** 2,
            self.alpha0 * (2.0 / h3) ** 2,
        )

    @property
    def alpha1(self):
        return self.alphas[0]

    @property
    def alpha2(self):
        return self.alphas[1]

    @property
    def alpha3(self):
        return self.alphas[2]


class Mesh:
    """Uniform Cartesian grid of n1 x n2 x n3 cuboid elements in a box.

    Parameters
    ----------
    n : three element counts, each >= 1.
    domain_min, domain_max : corners of the box.
    bc : boundary kind per box side, either a single string for all six
        sides or a sequence (x1 low, x1 high, x2 low, x2 high, x3 low,
        x3 high) of "dirichlet" / "neumann".
    """

    def __init__(self, n, domain_min=(0.0, 0.0, 0.0), domain_max=(1.0, 1.0, 1.0), bc="dirichlet"):
        n = tuple(int(v) for v in n)
        if len(n) != 3 or min(n) < 1:
            raise ValueError("need three element counts, each >= 1")
        lo = tuple(float(v) for v in domain_min)
        hi = tuple(float(v) for v in domain_max)
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("domain box has zero or negative volume")
        if isinstance(bc, str):
            bc = (bc,) * 6
        bc = tuple(bc)
        if len(bc) != 6 or any(kind not in _BC_KINDS for kind in bc):
            raise ValueError("bc needs six entries out of {'dirichlet', 'neumann'}")

        self.n = n
        self.domain_min = lo
        self.domain_max = hi
        self.bc = bc
        self.h = tuple((hi[d] - lo[d]) / n[d] for d in range(3))

        n1, n2, n3 = n
        ne = n1 * n2 * n3
        self.n_elements = ne
        e = np.arange(ne)
        ei = e % n1
        ej = (e // n1) % n2
        ek = e // (n1 * n2)
        self._eijk = (ei, ej, ek)

        # Per-direction face ids of each element's low/high face.
        self.face_lo = [None] * 3
        self.face_hi = [None] * 3
        self.face_lo[0] = ei + (n1 + 1) * (ej + n2 * ek)
        self.face_hi[0] = (ei + 1) + (n1 + 1) * (ej + n2 * ek)
        self.face_lo[1] = ei + n1 * (ej + (n2 + 1) * ek)
        self.face_hi[1] = ei + n1 * ((ej + 1) + (n2 + 1) * ek)
        self.face_lo[2] = ei + n1 * (ej + n2 * ek)
        self.face_hi[2] = ei + n1 * (ej + n2 * (ek + 1))

        self.n_faces = (
            (n1 + 1) * n2 * n3,
            n1 * (n2 + 1) * n3,
            n1 * n2 * (n3 + 1),
        )

        # Boundary classification per face via its plane index.
        self.face_kind = []
        for d in range(3):
            f = np.arange(self.n_faces[d])
            plane = self._face_plane(d, f)
            kind = np.full(self.n_faces[d], INTERIOR, dtype=np.int8)
            kind[plane == 0] = _BC_KINDS[bc[2 * d]]
            kind[plane == n[d]] = _BC_KINDS[bc[2 * d + 1]]
            self.face_kind.append(kind)
        self.face_is_unknown = [k != DIRICHLET for k in self.face_kind]
        self.geometry = ElementGeometry(self.h)

    def _face_plane(self, d, f):
        """Plane index (0..n_d) of the faces `f` in direction d."""
        n1, n2, _ = self.n
        if d == 0:
            return f % (n1 + 1)
        if d == 1:
            return (f // n1) % (n2 + 1)
        return f // (n1 * n2)

    def element_faces(self, e):
        """Low/high face id per direction for element e: ((lo, hi), ...)."""
        return tuple((int(self.face_lo[d][e]), int(self.face_hi[d][e])) for d in range(3))

    def element_node_grids(self, ref_nodes):
        """Physical node coordinates of all elements, broadcast-friendly.

        Returns (X1, X2, X3) with shapes (ne, n, 1, 1), (ne, 1, n, 1) and
        (ne, 1, 1, n); arithmetic on the triple broadcasts to the full
        (ne, n, n, n) nodal grid without materializing it here.
        """
        ref = np.asarray(ref_nodes)
        out = []
        for d, idx in enumerate(self._eijk):
            x = self.domain_min[d] + self.h[d] * (idx[:, None] + 0.5 * (ref[None, :] + 1.0))
            shape = [self.n_elements, 1, 1, 1]
            shape[1 + d] = ref.size
            out.append(x.reshape(shape))
        return tuple(out)

    def face_node_grids(self, d, ref_nodes):
        """Physical coordinates of the nodes of every direction-d face.

        Returns (X1, X2, X3) broadcastable to (n_faces[d], n, n), where the
        block axes are the two tangential directions in increasing
        coordinate order.
        """
        ref = np.asarray(ref_nodes)
        nf = self.n_faces[d]
        f = np.arange(nf)
        n1, n2, _ = self.n
        plane = self._face_plane(d, f)
        if d == 0:
            t1, t2 = 1, 2
            i1 = (f // (n1 + 1)) % n2
            i2 = f // ((n1 + 1) * n2)
        elif d == 1:
            t1, t2 = 0, 2
            i1 = f % n1
            i2 = f // (n1 * (n2 + 1))
        else:
            t1, t2 = 0, 1
            i1 = f % n1
            i2 = (f // n1) % n2

        coords = [None] * 3
        coords[d] = (self.domain_min[d] + self.h[d] * plane).reshape(nf, 1, 1)
        coords[t1] = (
            self.domain_min[t1] + self.h[t1] * (i1[:, None] + 0.5 * (ref[None, :] + 1.0))
        ).reshape(nf, ref.size, 1)
        coords[t2] = (
            self.domain_min[t2] + self.h[t2] * (i2[:, None] + 0.5 * (ref[None, :] + 1.0))
        ).reshape(nf, 1, ref.size)
        return tuple(coords)

    def n_trace_unknowns(self, p):
        """Total number of scalar unknowns on interior and Neumann faces."""
        blocks = sum(int(np.count_nonzero(m)) for m in self.face_is_unknown)
        return blocks * (p + 1) ** 2


def build_mesh(n, domain_min=(0.0, 0.0, 0.0), domain_max=(1.0, 1.0, 1.0), bc="dirichlet"):
    """Construct a mesh; see Mesh for the argument contract."""
    return Mesh(n, domain_min, domain_max, bc)


class FluxField:
    """Face-wise trace coefficients: one (p+1)^2 block per face.

    data[d] has shape (n_faces[d], p+1, p+1) with tangential axes in
    increasing coordinate order.  Dirichlet slots hold boundary data, all
    other slots hold unknowns.
    """

    def __init__(self, mesh, p, data=None):
        self.mesh = mesh
        self.p = int(p)
        n = self.p + 1
        if data is None:
            data = [np.zeros((mesh.n_faces[d], n, n)) for d in range(3)]
        else:
            data = [np.asarray(a, dtype=float) for a in data]
            for d in range(3):
                if data[d].shape != (mesh.n_faces[d], n, n):
                    raise ValueError("face block array has wrong shape")
        self.data = data

    def copy(self):
        return FluxField(self.mesh, self.p, [a.copy() for a in self.data])

    def zeros_like(self):
        return FluxField(self.mesh, self.p)

    def zero_dirichlet(self):
        """Zero all Dirichlet face blocks in place; returns self."""
        for d in range(3):
            self.data[d][self.mesh.face_kind[d] == DIRICHLET] = 0.0
        return self

    def max_abs(self):
        return max(np.max(np.abs(a)) if a.size else 0.0 for a in self.data)


def gather(field, e):
    """Element-local view of the six face blocks of element e.

    Returns (u1, u2, u3) with shapes (2, n, n), (n, 2, n) and (n, n, 2);
    the extra axis of length 2 sits on the element's normal direction and
    holds the low face first.  Values are copies of global storage, so
    Dirichlet faces hand back their stored boundary data.
    """
    mesh = field.mesh
    out = []
    for d in range(3):
        lo = field.data[d][mesh.face_lo[d][e]]
        hi = field.data[d][mesh.face_hi[d][e]]
        out.append(np.stack([lo, hi], axis=d))
    return tuple(out)


def scatter_add(blocks, e, field, include_dirichlet=False):
    """Accumulate element-local face residuals of element e into `field`.

    Interior faces receive contributions from both neighbours over repeated
    calls.  Contributions to Dirichlet faces are dropped unless
    `include_dirichlet` is set (those rows are not unknowns).
    """
    mesh = field.mesh
    for d in range(3):
        lo = int(mesh.face_lo[d][e])
        hi = int(mesh.face_hi[d][e])
        blk = np.moveaxis(blocks[d], d, 0)
        for f, part in ((lo, blk[0]), (hi, blk[1])):
            if include_dirichlet or mesh.face_kind[d][f] != DIRICHLET:
                field.data[d][f] += part


def gather_batched(field):
    """All-element gather: three arrays with a leading element axis."""
    mesh = field.mesh
    out = []
    for d in range(3):
        lo = field.data[d][mesh.face_lo[d]]
        hi = field.data[d][mesh.face_hi[d]]
        out.append(np.stack([lo, hi], axis=1 + d))
    return tuple(out)


def scatter_add_batched(blocks, field, include_dirichlet=True):
    """All-element scatter-add of per-element residual blocks.

    Within one direction every face is the low (resp. high) face of at most
    one element, so the two fancy-indexed adds below are race-free and
    deterministic.
    """
    mesh = field.mesh
    for d in range(3):
        blk = np.moveaxis(blocks[d], 1 + d, 1)
        lo_part, hi_part = blk[:, 0], blk[:, 1]
        if not include_dirichlet:
            keep_lo = mesh.face_is_unknown[d][mesh.face_lo[d]]
            keep_hi = mesh.face_is_unknown[d][mesh.face_hi[d]]
            field.data[d][mesh.face_lo[d][keep_lo]] += lo_part[keep_lo]
            field.data[d][mesh.face_hi[d][keep_hi]] += hi_part[keep_hi]
        else:
            field.data[d][mesh.face_lo[d]] += lo_part
            field.data[d][mesh.face_hi[d]] += hi_part


def pack_unknowns(field):
    """Flatten the unknown (non-Dirichlet) face blocks into one vector."""
    mesh = field.mesh
    return np.concatenate([field.data[d][mesh.face_is_unknown[d]].ravel() for d in range(3)])


def pack_all(field):
    """Flatten every face block (Dirichlet included) into one vector."""
    return np.concatenate([a.ravel() for a in field.data])


def unpack_all(vec, mesh, p):
    """Inverse of pack_all."""
    field = FluxField(mesh, p)
    n = p + 1
    pos = 0
    for d in range(3):
        cnt = mesh.n_faces[d] * n * n
        field.data[d] = vec[pos : pos + cnt].reshape(mesh.n_faces[d], n, n).copy()
        pos += cnt
    return field


def unpack_unknowns(vec, mesh, p):
    """Inverse of pack_unknowns; Dirichlet slots come back zero."""
    field = FluxField(mesh, p)
    n = p + 1
    pos = 0
    for d in range(3):
        cnt = int(np.count_nonzero(mesh.face_is_unknown[d]))
        chunk = vec[pos : pos + cnt * n * n].reshape(cnt, n, n)
        field.data[d][mesh.face_is_unknown[d]] = chunk
        pos += cnt * n * n
    return field
