"""Ground-truth 3D grade models: synthesis, block-model file I/O, bench
extraction, boundary-distance fields and drill-hole column sampling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "Rect",
    "GradeModel",
    "FieldSpec",
    "Bench",
    "TrainingSet",
    "BlockModelError",
    "synthesize_field",
    "save_block_model",
    "load_block_model",
    "boundary_distance",
    "collar_distance_field",
    "extract_columns",
]

# Geozone label assigned to synthetic intrusion veins (dolerite-style code,
# last digit 0 marks the intrusive class).
VEIN_CODE = 290


class BlockModelError(ValueError):
    """Malformed or inconsistent block-model file."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned footprint rectangle in meters."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate footprint {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def contains(self, xy) -> np.ndarray:
        """Boolean mask of points inside the closed rectangle."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return (
            (xy[:, 0] >= self.x0)
            & (xy[:, 0] <= self.x1)
            & (xy[:, 1] >= self.y0)
            & (xy[:, 1] <= self.y1)
        )


@dataclass(frozen=True)
class GradeModel:
    """Dense 3D grid of true grades with integer geozone labels.

    Arrays are indexed ``[ix, iy, iz]``; ``origin`` is the lower corner of
    the grid (cell centers sit at ``origin + (index + 0.5) * cell_size``).
    Instances are immutable; the backing arrays are marked read-only.
    """

    origin: np.ndarray
    cell_size: np.ndarray
    grade: np.ndarray
    domain: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        cell = np.asarray(self.cell_size, dtype=float).reshape(3)
        grade = np.asarray(self.grade, dtype=float)
        dom = np.asarray(self.domain)
        if not np.issubdtype(dom.dtype, np.integer):
            dom = dom.astype(np.int64)
        if grade.ndim != 3:
            raise ValueError("grade grid must be 3-dimensional")
        if grade.shape != dom.shape:
            raise ValueError(
                f"grade {grade.shape} and domain {dom.shape} dims differ"
            )
        if np.any(cell <= 0):
            raise ValueError("cell_size components must be strictly positive")
        if not np.all(np.isfinite(grade)):
            raise ValueError("grade grid contains non-finite values")
        if grade.size and (grade.min() < 0.0 or grade.max() > 100.0):
            raise ValueError("grades must lie in [0, 100]")
        for name, arr in (("origin", origin), ("cell_size", cell),
                          ("grade", grade), ("domain", dom)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grade.shape

    @property
    def footprint(self) -> Rect:
        nx, ny, _ = self.dims
        return Rect(
            self.origin[0],
            self.origin[1],
            self.origin[0] + nx * self.cell_size[0],
            self.origin[1] + ny * self.cell_size[1],
        )

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.cell_size[axis]

    def cell_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Containing-cell (ix, iy) for points inside the footprint."""
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size[0])
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.cell_size[1])
        nx, ny, _ = self.dims
        ix = np.clip(ix, 0, nx - 1).astype(int)
        iy = np.clip(iy, 0, ny - 1).astype(int)
        return ix, iy

    def domain_codes(self) -> np.ndarray:
        return np.unique(self.domain)


@dataclass(frozen=True)
class Bench:
    """A horizontal mining slab: z interval [z_rl, z_rl + height)."""

    z_rl: float
    height: float = 20.0

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("bench height must be positive")

    def z_slice(self, model: GradeModel) -> slice:
        """Index slice of model z-cells whose centers fall in the bench."""
        zc = model.axis_centers(2)
        z0, z1 = self.z_rl, self.z_rl + self.height
        if z0 < model.origin[2] - 1e-9 or z1 > model.origin[2] + model.dims[2] * model.cell_size[2] + 1e-9:
            raise ValueError(
                f"bench [{z0}, {z1}) outside model z-extent "
                f"[{model.origin[2]}, {model.origin[2] + model.dims[2] * model.cell_size[2]})"
            )
        inside = np.flatnonzero((zc >= z0) & (zc < z1))
        if inside.size == 0:
            raise ValueError(f"bench [{z0}, {z1}) contains no cell centers")
        return slice(int(inside[0]), int(inside[-1]) + 1)

    def z_centers(self, model: GradeModel) -> np.ndarray:
        return model.axis_centers(2)[self.z_slice(model)]


@dataclass(frozen=True)
class TrainingSet:
    """Ordered drill-hole observations: collar (x, y) plus one sample per
    z-cell down the column.
    """

    X: np.ndarray          # (n, 3) sample locations, meters
    y: np.ndarray          # (n,) observed grades
    domain: np.ndarray     # (n,) geozone code at each sample
    collar_index: np.ndarray  # (n,) index into `collars` per sample
    collars: np.ndarray    # (c, 2) collar positions in acquisition order

    def __post_init__(self):
        for name in ("X", "y", "domain", "collar_index", "collars"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.X.shape[0]

    @classmethod
    def empty(cls) -> "TrainingSet":
        return cls(
            X=np.empty((0, 3)),
            y=np.empty(0),
            domain=np.empty(0, dtype=np.int64),
            collar_index=np.empty(0, dtype=np.int64),
            collars=np.empty((0, 2)),
        )

    def select(self, mask) -> "TrainingSet":
        """Subset of observations; collar list is kept intact."""
        mask = np.asarray(mask)
        return TrainingSet(
            X=self.X[mask],
            y=self.y[mask],
            domain=self.domain[mask],
            collar_index=self.collar_index[mask],
            collars=self.collars,
        )

    def filter_domain(self, code: int) -> "TrainingSet":
        return self.select(self.domain == code)

    def concat(self, other: "TrainingSet") -> "TrainingSet":
        offset = self.collars.shape[0]
        return TrainingSet(
            X=np.vstack([self.X, other.X]),
            y=np.concatenate([self.y, other.y]),
            domain=np.concatenate([self.domain, other.domain]),
            collar_index=np.concatenate(
                [self.collar_index, other.collar_index + offset]
            ),
            collars=np.vstack([self.collars, other.collars]),
        )


@dataclass(frozen=True)
class FieldSpec:
    """Recipe for a synthetic grade model.

    ``domain_means`` / ``domain_variances`` give the target grade statistics
    per geozone; ``correlation_lengths`` (meters, per axis) set the spatial
    texture. The same spec and seed always reproduce the identical model.
    """

    dims: tuple[int, int, int]
    cell_size: tuple[float, float, float] = (5.0, 5.0, 2.5)
    domain_count: int = 2
    discontinuity_count: int = 1
    intrusion_count: int = 1
    domain_means: tuple[float, ...] = ()
    domain_variances: tuple[float, ...] = ()
    correlation_lengths: tuple[float, float, float] = (40.0, 40.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) != d or d <= 0 for d in self.dims):
            raise ValueError("dims must be three positive integers")
        if self.domain_count < 1:
            raise ValueError("domain_count must be >= 1")
        if self.discontinuity_count < 0 or self.intrusion_count < 0:
            raise ValueError("feature counts must be >= 0")
        means = self.domain_means or tuple(
            np.linspace(25.0, 60.0, self.domain_count)
        )
        variances = self.domain_variances or tuple([16.0] * self.domain_count)
        if len(means) != self.domain_count or len(variances) != self.domain_count:
            raise ValueError("per-domain means/variances must match domain_count")
        if any(v < 0 for v in variances):
            raise ValueError("variances must be >= 0")
        if any(c <= 0 for c in self.correlation_lengths):
            raise ValueError("correlation lengths must be positive")
        object.__setattr__(self, "domain_means", tuple(float(m) for m in means))
        object.__setattr__(
            self, "domain_variances", tuple(float(v) for v in variances)
        )


def _host_codes(count: int) -> np.ndarray:
    """Geozone-style codes for synthetic host domains (waste xx1 and
    mineralized xx2 alternate)."""
    return np.array(
        [200 + 10 * (k + 1) + (1 if k % 2 == 0 else 2) for k in range(count)],
        dtype=np.int64,
    )


def _smooth_noise(rng: np.random.Generator, dims, size_cells) -> np.ndarray:
    """Standardized moving-average-smoothed white noise."""
    white = rng.standard_normal(dims)
    size = [max(1, int(s)) for s in size_cells]
    sm = ndimage.uniform_filter(white, size=size, mode="reflect")
    sd = sm.std()
    if sd == 0:
        return np.zeros(dims)
    return (sm - sm.mean()) / sd


def _cell_center_coords(dims, cell_size):
    axes = [
        (np.arange(dims[a]) + 0.5) * cell_size[a] for a in range(3)
    ]
    return np.meshgrid(*axes, indexing="ij")


def synthesize_field(spec: FieldSpec) -> GradeModel:
    """Generate a synthetic grade model with geozones, planar fault offsets
    and thin low-grade intrusion veins.

    Host geozones are quantile partitions of a broadly smoothed random
    field; each carries its own smoothed grade texture recentred and
    rescaled to the spec's mean/variance targets. Faults add a balanced
    step across a random plane; veins overwrite a 1-2 cell-wide planar
    band with low grade and relabel it with a dedicated intrusive code.
    """
    if any(d < 8 for d in spec.dims):
        raise ValueError(f"dims {spec.dims} too small; every component must be >= 8")
    rng = np.random.default_rng(spec.seed)
    dims = tuple(int(d) for d in spec.dims)
    cell = np.asarray(spec.cell_size, dtype=float)
    corr_cells = np.maximum(1, np.round(np.asarray(spec.correlation_lengths) / cell))

    # Geozone partition from a broader auxiliary field.
    aux = _smooth_noise(rng, dims, corr_cells * 2)
    if spec.domain_count == 1:
        label_idx = np.zeros(dims, dtype=np.int64)
    else:
        qs = np.quantile(aux, np.linspace(0, 1, spec.domain_count + 1)[1:-1])
        label_idx = np.searchsorted(qs, aux).astype(np.int64)
    codes = _host_codes(spec.domain_count)
    domain = codes[label_idx]

    # Per-domain grade texture with exact sample mean/variance targets.
    base = _smooth_noise(rng, dims, corr_cells)
    grade = np.zeros(dims)
    for k in range(spec.domain_count):
        m = label_idx == k
        vals = base[m]
        sd = vals.std()
        target_sd = float(np.sqrt(spec.domain_variances[k]))
        if sd == 0 or target_sd == 0:
            grade[m] = spec.domain_means[k]
        else:
            grade[m] = spec.domain_means[k] + (vals - vals.mean()) * (target_sd / sd)

    cx, cy, cz = _cell_center_coords(dims, cell)
    extent = np.asarray(dims) * cell
    overall_sd = float(np.sqrt(np.mean(spec.domain_variances))) or 1.0

    for _ in range(spec.discontinuity_count):
        # Steep fault plane: mostly-horizontal normal, random strike.
        phi = rng.uniform(0, 2 * np.pi)
        tilt = rng.uniform(-0.2, 0.2)
        normal = np.array([np.cos(phi), np.sin(phi), tilt])
        normal /= np.linalg.norm(normal)
        p0 = rng.uniform(0.25, 0.75, size=3) * extent
        signed = (cx - p0[0]) * normal[0] + (cy - p0[1]) * normal[1] + (cz - p0[2]) * normal[2]
        delta = rng.uniform(0.8, 1.6) * overall_sd
        offset = 0.5 * delta * np.sign(signed)
        grade += offset
        # Remove the constant per-domain shift so target means survive.
        for k in range(spec.domain_count):
            m = label_idx == k
            grade[m] -= offset[m].mean()

    for _ in range(spec.intrusion_count):
        phi = rng.uniform(0, 2 * np.pi)
        tilt = rng.uniform(-0.3, 0.3)
        normal = np.array([np.cos(phi), np.sin(phi), tilt])
        normal /= np.linalg.norm(normal)
        p0 = rng.uniform(0.2, 0.8, size=3) * extent
        signed = (cx - p0[0]) * normal[0] + (cy - p0[1]) * normal[1] + (cz - p0[2]) * normal[2]
        width = rng.uniform(1.0, 2.0) * float(np.min(cell[:2]))
        vein = np.abs(signed) <= 0.5 * width
        grade[vein] = rng.uniform(2.0, 8.0)
        domain[vein] = VEIN_CODE

    np.clip(grade, 0.0, 100.0, out=grade)
    return GradeModel(
        origin=np.zeros(3), cell_size=cell, grade=grade, domain=domain
    )


# --- block-model CSV ------------------------------------------------------

_HEADER = ["x", "y", "z", "grade", "domain"]


def save_block_model(model: GradeModel, dest) -> None:
    """Write the canonical block-model CSV (header x,y,z,grade,domain; one
    row per cell center; x varies fastest)."""
    own = isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__")
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write(",".join(_HEADER) + "\n")
        xs = model.axis_centers(0)
        ys = model.axis_centers(1)
        zs = model.axis_centers(2)
        nx, ny, nz = model.dims
        for k in range(nz):
            zs_s = f"{zs[k]:.10g}"
            for j in range(ny):
                ys_s = f"{ys[j]:.10g}"
                for i in range(nx):
                    fh.write(
                        f"{xs[i]:.10g},{ys_s},{zs_s},"
                        f"{model.grade[i, j, k]:.8g},{int(model.domain[i, j, k])}\n"
                    )
    finally:
        if own:
            fh.close()


def _axis_from_coords(vals: np.ndarray, name: str):
    uniq = np.unique(vals)
    if uniq.size == 1:
        raise BlockModelError(f"axis {name} is degenerate (single coordinate)")
    steps = np.diff(uniq)
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
        raise BlockModelError(f"axis {name} coordinates are not uniformly spaced")
    return uniq, float(steps[0])


def load_block_model(source) -> GradeModel:
    """Read a block-model CSV into a GradeModel.

    Raises BlockModelError naming the offending 1-based data row for
    malformed rows or out-of-range grades, and the first missing cell for
    incomplete grids. Domain codes are preserved verbatim.
    """
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    fh = open(source, "r", newline="") if own else source
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _HEADER:
            raise BlockModelError(
                f"bad header {header!r}; expected {','.join(_HEADER)}"
            )
        xs, ys, zs, grades, domains = [], [], [], [], []
        for idx, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 5:
                raise BlockModelError(f"row {idx}: expected 5 fields, got {len(row)}")
            try:
                x, y, z, g = (float(row[0]), float(row[1]), float(row[2]),
                              float(row[3]))
                d = int(row[4])
            except ValueError as exc:
                raise BlockModelError(f"row {idx}: {exc}") from None
            if not np.isfinite(g) or g < 0.0 or g > 100.0:
                raise BlockModelError(
                    f"row {idx}: grade {g} outside valid range [0, 100]"
                )
            xs.append(x)
            ys.append(y)
            zs.append(z)
            grades.append(g)
            domains.append(d)
    finally:
        if own:
            fh.close()
    if not xs:
        raise BlockModelError("file contains no data rows")
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    zs = np.asarray(zs)
    ux, dx = _axis_from_coords(xs, "x")
    uy, dy = _axis_from_coords(ys, "y")
    uz, dz = _axis_from_coords(zs, "z")
    dims = (ux.size, uy.size, uz.size)
    ii = np.rint((xs - ux[0]) / dx).astype(int)
    jj = np.rint((ys - uy[0]) / dy).astype(int)
    kk = np.rint((zs - uz[0]) / dz).astype(int)
    grade = np.full(dims, np.nan)
    domain = np.zeros(dims, dtype=np.int64)
    seen = np.zeros(dims, dtype=bool)
    for r in range(len(xs)):
        if seen[ii[r], jj[r], kk[r]]:
            raise BlockModelError(
                f"duplicate cell at ({xs[r]:g}, {ys[r]:g}, {zs[r]:g})"
            )
        seen[ii[r], jj[r], kk[r]] = True
        grade[ii[r], jj[r], kk[r]] = grades[r]
        domain[ii[r], jj[r], kk[r]] = domains[r]
    if not seen.all():
        i, j, k = np.argwhere(~seen)[0]
        raise BlockModelError(
            f"incomplete grid: missing cell at ({ux[0] + i * dx:g}, "
            f"{uy[0] + j * dy:g}, {uz[0] + k * dz:g})"
        )
    origin = np.array([ux[0] - dx / 2, uy[0] - dy / 2, uz[0] - dz / 2])
    return GradeModel(
        origin=origin, cell_size=np.array([dx, dy, dz]), grade=grade, domain=domain
    )


# --- bench-level fields ---------------------------------------------------

def boundary_distance(model: GradeModel, bench: Bench) -> np.ndarray:
    """Per-cell Euclidean distance (meters) to the nearest cell with a
    different geozone label within the bench.

    A single-domain bench yields +inf everywhere (documented sentinel);
    distances are center-to-center, so the minimum is one cell pitch.
    """
    zs = bench.z_slice(model)
    sub = model.domain[:, :, zs]
    out = np.full(sub.shape, np.inf)
    labels = np.unique(sub)
    if labels.size <= 1:
        return out
    sampling = tuple(float(c) for c in model.cell_size)
    for code in labels:
        mask = sub == code
        dist = ndimage.distance_transform_edt(mask, sampling=sampling)
        out[mask] = dist[mask]
    return out


def collar_distance_field(model: GradeModel, bench: Bench):
    """2D boundary-distance summary per (x, y) column plus a lookup.

    Returns ``(grid, fn)`` where ``grid[i, j]`` is the minimum boundary
    distance down the bench column and ``fn(x, y)`` does a nearest-cell
    lookup for arbitrary collar positions inside the footprint.
    """
    bd = boundary_distance(model, bench)
    grid = bd.min(axis=2)

    def fn(x, y):
        ix, iy = model.cell_index(x, y)
        return grid[ix, iy]

    return grid, fn


def extract_columns(model: GradeModel, bench: Bench, collars) -> TrainingSet:
    """Sample one observation per bench z-cell down each collar's column.

    Observation locations keep the exact collar (x, y) with the cell-center
    z; values and geozone labels come from the nearest cell center (no
    interpolation). Order-preserving and idempotent.
    """
    collars = np.asarray(collars, dtype=float).reshape(-1, 2)
    if collars.size == 0:
        return TrainingSet.empty()
    fp = model.footprint
    inside = fp.contains(collars)
    if not inside.all():
        bad = collars[~inside][0]
        raise ValueError(
            f"collar ({bad[0]:g}, {bad[1]:g}) outside footprint "
            f"[{fp.x0:g}, {fp.x1:g}] x [{fp.y0:g}, {fp.y1:g}]"
        )
    zs = bench.z_slice(model)
    z_centers = model.axis_centers(2)[zs]
    nz = z_centers.size
    ix, iy = model.cell_index(collars[:, 0], collars[:, 1])
    n = collars.shape[0]
    X = np.empty((n * nz, 3))
    X[:, 0] = np.repeat(collars[:, 0], nz)
    X[:, 1] = np.repeat(collars[:, 1], nz)
    X[:, 2] = np.tile(z_centers, n)
    grade_cols = model.grade[ix, iy, zs]     # (n, nz)
    domain_cols = model.domain[ix, iy, zs]
    return TrainingSet(
        X=X,
        y=grade_cols.reshape(-1),
        domain=domain_cols.reshape(-1),
        collar_index=np.repeat(np.arange(n), nz),
        collars=collars,
    )
