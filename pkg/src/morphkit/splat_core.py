"""Gaussian Splatting cloud data model and file I/O.

A cloud is stored as flat numpy arrays (one row per primitive) with the
standard splatting activations already applied: opacity through the
logistic function, scales through the exponential, color from the DC
spherical-harmonic band.  Raw extra properties found in a PLY file
(normals, higher-order SH bands) are carried through untouched so a
load/save cycle preserves them bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ArgumentError, DataError, IoError, ParseError, SchemaError

# DC spherical-harmonic basis constant: color = 0.5 + SH_C0 * f_dc
SH_C0 = 0.28209479177387814

REQUIRED_PLY_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_PLY_TYPE_TO_NUMPY = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1",
    "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
}


def _logistic(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic Gaussian: center, opacity, per-axis scale, rotation, color.

    The rotation quaternion is stored w-x-y-z and must be unit length; scales
    are strictly positive; opacity lies in (0, 1].  Color is nominally RGB in
    [0, 1] but is not clamped here: out-of-range DC coefficients survive a
    file round-trip and the renderer clamps at composite time.
    """

    center: np.ndarray
    opacity: float
    scale: np.ndarray
    rotation: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64))
        if self.center.shape != (3,) or self.scale.shape != (3,) or self.color.shape != (3,):
            raise ArgumentError("center, scale and color must be 3-vectors")
        if self.rotation.shape != (4,):
            raise ArgumentError("rotation must be a w-x-y-z quaternion")
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise ArgumentError(f"quaternion norm {np.linalg.norm(self.rotation)} is not 1")
        if not np.all(self.scale > 0):
            raise ArgumentError("scale components must be strictly positive")
        if not (0.0 < self.opacity <= 1.0):
            raise ArgumentError(f"opacity {self.opacity} outside (0, 1]")


class _PrimitiveView(Sequence):
    """Read-only sequence adapter exposing cloud rows as GaussianPrimitive."""

    def __init__(self, cloud: "GaussianCloud"):
        self._cloud = cloud

    def __len__(self) -> int:
        return len(self._cloud)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        c = self._cloud
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(c)))]
        return GaussianPrimitive(
            center=c.center[i],
            opacity=float(c.opacity[i]),
            scale=c.scale[i],
            rotation=c.rotation[i],
            color=c.color[i],
        )

    def __iter__(self) -> Iterator[GaussianPrimitive]:
        for i in range(len(self)):
            yield self[i]


@dataclass
class GaussianCloud:
    """An ordered, immutable collection of Gaussian primitives.

    center: (N, 3), opacity: (N,), scale: (N, 3), rotation: (N, 4) unit
    w-x-y-z quaternions, color: (N, 3).  `extras` holds raw passthrough PLY
    properties (e.g. nx/ny/nz, f_rest_*) keyed by name; `ply_layout` remembers
    the property order and dtypes of the source file so saving reproduces it.
    Primitive order is stable: every downstream operation preserves it.
    """

    center: np.ndarray
    opacity: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    color: np.ndarray
    extras: dict = field(default_factory=dict)
    ply_layout: Optional[list] = None
    source_path: Optional[str] = None

    def __post_init__(self):
        self.center = np.ascontiguousarray(self.center, dtype=np.float64)
        self.opacity = np.ascontiguousarray(self.opacity, dtype=np.float64)
        self.scale = np.ascontiguousarray(self.scale, dtype=np.float64)
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64)
        self.color = np.ascontiguousarray(self.color, dtype=np.float64)
        n = self.center.shape[0]
        if n == 0:
            raise ArgumentError("a GaussianCloud must contain at least one primitive")
        shapes = {
            "center": (n, 3), "opacity": (n,), "scale": (n, 3),
            "rotation": (n, 4), "color": (n, 3),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ArgumentError(f"{name} has shape {got}, expected {want}")
        norms = np.linalg.norm(self.rotation, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ArgumentError(f"quaternion {bad} has norm {norms[bad]}")
        if not np.all(self.scale > 0):
            raise ArgumentError("all scale components must be strictly positive")
        if np.any(self.opacity <= 0) or np.any(self.opacity > 1):
            raise ArgumentError("opacities must lie in (0, 1]")
        for arr in (self.center, self.opacity, self.scale, self.rotation, self.color):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.center.shape[0]

    @property
    def count(self) -> int:
        return self.center.shape[0]

    @property
    def primitives(self) -> _PrimitiveView:
        return _PrimitiveView(self)

    def replaced(self, *, center=None, scale=None, rotation=None) -> "GaussianCloud":
        """New cloud with some geometric fields swapped; order and count kept."""
        return GaussianCloud(
            center=self.center if center is None else center,
            opacity=self.opacity.copy(),
            scale=self.scale if scale is None else scale,
            rotation=self.rotation if rotation is None else rotation,
            color=self.color.copy(),
            extras={k: v.copy() for k, v in self.extras.items()},
            ply_layout=list(self.ply_layout) if self.ply_layout else None,
            source_path=self.source_path,
        )


def centers(cloud: GaussianCloud) -> np.ndarray:
    """All primitive centers as an (N, 3) array, in primitive order."""
    return np.array(cloud.center, dtype=np.float64)


def _parse_ply_header(data: bytes, path: str):
    """Parse a PLY header; returns (layout, vertex_count, payload_offset)."""
    end_marker = b"end_header\n"
    end = data.find(end_marker)
    if not data.startswith(b"ply"):
        raise ParseError(f"{path}: not a PLY file (first line {data[:16]!r})")
    if end < 0:
        raise ParseError(f"{path}: header has no end_header line")
    header = data[:end].decode("ascii", errors="replace")
    lines = [ln.strip("\r") for ln in header.split("\n")]

    fmt = None
    vertex_count = None
    layout: list[tuple[str, str]] = []
    in_vertex = False
    for line in lines[1:]:
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "binary_little_endian":
                raise ParseError(f"{path}: unsupported format line: {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or parts[1] != "vertex":
                raise ParseError(f"{path}: unsupported element line: {line!r}")
            try:
                vertex_count = int(parts[2])
            except ValueError:
                raise ParseError(f"{path}: bad vertex count: {line!r}") from None
            in_vertex = True
        elif parts[0] == "property":
            if not in_vertex:
                raise ParseError(f"{path}: property before element: {line!r}")
            if parts[1] == "list":
                raise ParseError(f"{path}: list properties unsupported: {line!r}")
            if len(parts) != 3 or parts[1] not in _PLY_TYPE_TO_NUMPY:
                raise ParseError(f"{path}: bad property line: {line!r}")
            layout.append((parts[2], parts[1]))
        else:
            raise ParseError(f"{path}: unrecognized header line: {line!r}")
    if fmt is None:
        raise ParseError(f"{path}: header has no format line")
    if vertex_count is None:
        raise ParseError(f"{path}: header has no vertex element")
    return layout, vertex_count, end + len(end_marker)


def load_ply(path) -> GaussianCloud:
    """Load a binary little-endian splatting PLY into an activated cloud.

    Expects the de-facto layout: positions x/y/z, logit opacity, log scales
    scale_0..2, quaternion rot_0..3 and DC color coefficients f_dc_0..2.
    Any further (non-list) properties are preserved verbatim in `extras`.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    layout, count, offset = _parse_ply_header(data, str(path))
    names = [name for name, _ in layout]
    for req in REQUIRED_PLY_PROPERTIES:
        if req not in names:
            raise SchemaError(f"{path}: missing required property '{req}'")
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ParseError(f"{path}: duplicate property '{dup}'")
    if count < 1:
        raise DataError(f"{path}: vertex count {count}, need at least 1")

    dtype = np.dtype([(name, _PLY_TYPE_TO_NUMPY[t]) for name, t in layout])
    need = count * dtype.itemsize
    if len(data) - offset < need:
        raise ParseError(
            f"{path}: payload truncated ({len(data) - offset} bytes, need {need})"
        )
    rows = np.frombuffer(data, dtype=dtype, count=count, offset=offset)

    def col(name):
        return np.asarray(rows[name], dtype=np.float64)

    raw = {name: col(name) for name in REQUIRED_PLY_PROPERTIES}
    for fname, arr in raw.items():
        if np.any(np.isnan(arr)):
            idx = int(np.argmax(np.isnan(arr)))
            raise DataError(f"{path}: NaN in '{fname}' at primitive {idx}")

    center = np.stack([raw["x"], raw["y"], raw["z"]], axis=1)
    opacity = _logistic(raw["opacity"])
    scale = np.exp(np.stack([raw[f"scale_{i}"] for i in range(3)], axis=1))
    quats = np.stack([raw[f"rot_{i}"] for i in range(4)], axis=1)
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms < 1e-12):
        idx = int(np.argmax(norms < 1e-12))
        raise DataError(f"{path}: zero-norm quaternion at primitive {idx}")
    rotation = quats / norms[:, None]
    color = 0.5 + SH_C0 * np.stack([raw[f"f_dc_{i}"] for i in range(3)], axis=1)

    extras = {
        name: np.array(rows[name])
        for name in names
        if name not in REQUIRED_PLY_PROPERTIES
    }
    return GaussianCloud(
        center=center, opacity=opacity, scale=scale, rotation=rotation,
        color=color, extras=extras, ply_layout=list(layout), source_path=str(path),
    )


def save_ply(cloud: GaussianCloud, path) -> None:
    """Write a cloud back to splatting PLY, inverting the activations.

    Reuses the source file's property order and dtypes when the cloud came
    from a PLY; otherwise writes the canonical float32 layout.
    """
    path = Path(path)
    if cloud.ply_layout is not None:
        layout = list(cloud.ply_layout)
    else:
        layout = [(name, "float") for name in REQUIRED_PLY_PROPERTIES]
        layout += [(name, "float") for name in sorted(cloud.extras)]

    n = len(cloud)
    raw_opacity = _logit(cloud.opacity)
    raw_scale = np.log(cloud.scale)
    raw_fdc = (cloud.color - 0.5) / SH_C0
    derived = {
        "x": cloud.center[:, 0], "y": cloud.center[:, 1], "z": cloud.center[:, 2],
        "opacity": raw_opacity,
        "scale_0": raw_scale[:, 0], "scale_1": raw_scale[:, 1], "scale_2": raw_scale[:, 2],
        "rot_0": cloud.rotation[:, 0], "rot_1": cloud.rotation[:, 1],
        "rot_2": cloud.rotation[:, 2], "rot_3": cloud.rotation[:, 3],
        "f_dc_0": raw_fdc[:, 0], "f_dc_1": raw_fdc[:, 1], "f_dc_2": raw_fdc[:, 2],
    }

    dtype = np.dtype([(name, _PLY_TYPE_TO_NUMPY[t]) for name, t in layout])
    rows = np.empty(n, dtype=dtype)
    for name, _t in layout:
        if name in derived:
            rows[name] = derived[name]
        elif name in cloud.extras:
            rows[name] = cloud.extras[name]
        else:
            raise ArgumentError(f"layout property '{name}' has no data in this cloud")

    header_lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header_lines += [f"property {t} {name}" for name, t in layout]
    header_lines.append("end_header")
    header = ("\n".join(header_lines) + "\n").encode("ascii")

    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(rows.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_json(path) -> GaussianCloud:
    """Load the JSON fixture format: activated primitives as plain lists."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "primitives" not in doc:
        raise SchemaError(f"{path}: missing required key 'primitives'")
    prims = doc["primitives"]
    if not isinstance(prims, list) or not prims:
        raise DataError(f"{path}: 'primitives' must be a nonempty array")

    fields = {"center": 3, "scale": 3, "rotation": 4, "color": 3}
    arrays = {name: [] for name in fields}
    opacities = []
    for i, entry in enumerate(prims):
        for name, width in fields.items():
            if name not in entry:
                raise SchemaError(f"{path}: primitive {i} missing '{name}'")
            vec = np.asarray(entry[name], dtype=np.float64)
            if vec.shape != (width,):
                raise DataError(f"{path}: primitive {i} field '{name}' is not a {width}-vector")
            arrays[name].append(vec)
        if "opacity" not in entry:
            raise SchemaError(f"{path}: primitive {i} missing 'opacity'")
        opacities.append(float(entry["opacity"]))

    rotation = np.stack(arrays["rotation"])
    norms = np.linalg.norm(rotation, axis=1)
    if np.any(norms < 1e-12):
        raise DataError(f"{path}: zero-norm quaternion at primitive {int(np.argmax(norms < 1e-12))}")
    rotation = rotation / norms[:, None]
    return GaussianCloud(
        center=np.stack(arrays["center"]),
        opacity=np.asarray(opacities),
        scale=np.stack(arrays["scale"]),
        rotation=rotation,
        color=np.stack(arrays["color"]),
        source_path=str(path),
    )


def save_json(cloud: GaussianCloud, path) -> None:
    """Write the JSON fixture format (activated values, extras dropped)."""
    doc = {
        "primitives": [
            {
                "center": cloud.center[i].tolist(),
                "opacity": float(cloud.opacity[i]),
                "scale": cloud.scale[i].tolist(),
                "rotation": cloud.rotation[i].tolist(),
                "color": cloud.color[i].tolist(),
            }
            for i in range(len(cloud))
        ]
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=2))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_cloud(path) -> GaussianCloud:
    """Load a cloud from either supported format, chosen by extension."""
    suffix = Path(path).suffix.lower()
    if suffix == ".json":
        return load_json(path)
    return load_ply(path)
