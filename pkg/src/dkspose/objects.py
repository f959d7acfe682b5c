"""Object models: vertices, diameter, symmetry flag and selected edge points.

On disk a model is a ``model.json`` document::

    {
      "format_version": 1,
      "class_id": 0,
      "name": "box_0",
      "shape": "box",                      # primitive used by the renderer
      "dims": ["0.1", "0.08", "0.2"],
      "symmetric": false,
      "diameter": "0.24083189157584591",
      "vertices": [["x", "y", "z"], ...],
      "normals": [["nx", "ny", "nz"], ...],  # optional
      "edge_points": [["x", "y", "z"], ...]
    }

Every real number is a decimal string with 17 significant digits, so the
files round-trip bit-exactly and are byte-identical across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from .errors import ValidationError

MODEL_FORMAT_VERSION = 1


def max_pairwise_distance(vertices) -> float:
    """Exact diameter. Only hull vertices can realise the maximum."""
    pts = np.asarray(vertices, dtype=np.float64)
    if len(pts) > 64:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # flat or degenerate sets: fall back to all points
            pass
    return float(pdist(pts).max())


@dataclass(frozen=True, eq=False)
class ObjectModel:
    class_id: int
    vertices: np.ndarray
    diameter: float
    symmetric: bool = False
    edge_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    normals: np.ndarray | None = None
    shape: str | None = None
    dims: tuple = ()
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        if len(v) < 4:
            raise ValidationError("an object model needs at least 4 vertices")
        if not self.diameter > 0:
            raise ValidationError("diameter must be positive")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edge_points", np.asarray(self.edge_points, dtype=np.float64).reshape(-1, 3))
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(v):
                raise ValidationError("normals length differs from vertex count")
            object.__setattr__(self, "normals", n)
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))

    @classmethod
    def from_vertices(cls, class_id, vertices, **kw) -> ObjectModel:
        return cls(class_id, vertices, max_pairwise_distance(vertices), **kw)

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def n_edge_points(self) -> int:
        return len(self.edge_points)

    def with_edge_points(self, edge_points) -> ObjectModel:
        return replace(self, edge_points=np.asarray(edge_points, dtype=np.float64))


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _rows(a) -> list:
    return [[_fmt(x) for x in row] for row in np.asarray(a)]


def model_to_dict(model: ObjectModel) -> dict:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "class_id": int(model.class_id),
        "name": model.name,
        "shape": model.shape,
        "dims": [_fmt(d) for d in model.dims],
        "symmetric": bool(model.symmetric),
        "diameter": _fmt(model.diameter),
        "vertices": _rows(model.vertices),
        "edge_points": _rows(model.edge_points),
    }
    if model.normals is not None:
        doc["normals"] = _rows(model.normals)
    return doc


def model_from_dict(doc: dict) -> ObjectModel:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValidationError(f"unsupported model format_version {doc.get('format_version')!r}")
    try:
        def arr(key):
            return np.array([[float(x) for x in row] for row in doc[key]], dtype=np.float64).reshape(-1, 3)

        return ObjectModel(
            class_id=int(doc["class_id"]),
            vertices=arr("vertices"),
            diameter=float(doc["diameter"]),
            symmetric=bool(doc["symmetric"]),
            edge_points=arr("edge_points"),
            normals=arr("normals") if "normals" in doc else None,
            shape=doc.get("shape"),
            dims=tuple(float(d) for d in doc.get("dims", ())),
            name=doc.get("name", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed model document: {exc}") from exc


def save_model(model: ObjectModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> ObjectModel:
    return model_from_dict(json.loads(Path(path).read_text()))
