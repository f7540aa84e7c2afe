"""Dataset directory serialization.

Layout: ``manifest.json`` carries the version, image geometry and the per
entry side information (category, group ids, graph, route labels), while
``scenario_<id>.bin`` holds the dense payload: the row-major float32 image,
a uint32 point count and the float32 (x, y, t) rows.  All binary values are
little-endian, so a save/load round trip is bit exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .scenario import (
    Dataset,
    GroupIndex,
    InfrastructureImage,
    RouteLabeling,
    Scenario,
    TopologyGraph,
    Trajectory,
)

__all__ = ["DatasetFormatError", "save_dataset", "load_dataset", "FORMAT_VERSION"]

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """A dataset directory does not match the expected on-disk format."""


def _entry_filename(idx: int) -> str:
    return f"scenario_{idx:05d}.bin"


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` to directory ``path`` (created if absent)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    size = dataset.entries[0].image.size
    mpp = dataset.entries[0].image.meters_per_pixel
    entries = []
    for i, s in enumerate(dataset.entries):
        if s.image.size != size or s.image.meters_per_pixel != mpp:
            raise DatasetFormatError("all scenarios must share image geometry")
        fname = _entry_filename(i)
        blob = bytearray()
        blob += np.ascontiguousarray(s.image.pixels, dtype="<f4").tobytes()
        blob += np.array([len(s.trajectory)], dtype="<u4").tobytes()
        blob += np.ascontiguousarray(s.trajectory.points, dtype="<f4").tobytes()
        (out / fname).write_bytes(bytes(blob))
        entries.append(
            {
                "id": i,
                "file": fname,
                "category": s.category,
                "category_id": int(dataset.groups.category_ids[i]),
                "graph_id": int(dataset.groups.graph_ids[i]),
                "route_id": int(dataset.groups.route_ids[i]),
                "n_points": len(s.trajectory),
                "graph": {
                    "polylines": [p.tolist() for p in s.graph.polylines],
                    "edges": [[e[0], e[1], e[2]] for e in s.graph.edges],
                },
                "route_labels": s.route.labels.tolist(),
            }
        )
    manifest = {
        "version": FORMAT_VERSION,
        "image_size": size,
        "meters_per_pixel": mpp,
        "entries": entries,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by :func:`save_dataset`."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetFormatError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"malformed manifest: {exc}") from exc
    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"version mismatch: file declares {version}, expected {FORMAT_VERSION}"
        )
    try:
        size = int(manifest["image_size"])
        mpp = float(manifest["meters_per_pixel"])
        raw_entries = manifest["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed manifest: {exc}") from exc

    scenarios = []
    cat_ids, graph_ids, route_ids = [], [], []
    for meta in raw_entries:
        fpath = root / meta["file"]
        if not fpath.is_file():
            raise DatasetFormatError(f"missing entry: {meta['file']}")
        blob = fpath.read_bytes()
        n_pix = size * size
        header_bytes = 4 * n_pix + 4
        if len(blob) < header_bytes:
            raise DatasetFormatError(f"shape mismatch in {meta['file']}")
        pixels = np.frombuffer(blob, dtype="<f4", count=n_pix).reshape(size, size)
        n_points = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4 * n_pix)[0])
        expected = header_bytes + 12 * n_points
        if len(blob) != expected or n_points != int(meta["n_points"]):
            raise DatasetFormatError(f"shape mismatch in {meta['file']}")
        points = np.frombuffer(
            blob, dtype="<f4", count=3 * n_points, offset=header_bytes
        ).reshape(n_points, 3)
        graph = TopologyGraph(
            polylines=tuple(np.asarray(p, dtype=np.float64) for p in meta["graph"]["polylines"]),
            edges=tuple((int(e[0]), int(e[1]), str(e[2])) for e in meta["graph"]["edges"]),
        )
        scenarios.append(
            Scenario(
                image=InfrastructureImage(pixels=pixels, meters_per_pixel=mpp),
                trajectory=Trajectory(points=points),
                graph=graph,
                route=RouteLabeling(labels=np.asarray(meta["route_labels"])),
                category=str(meta["category"]),
            )
        )
        cat_ids.append(int(meta["category_id"]))
        graph_ids.append(int(meta["graph_id"]))
        route_ids.append(int(meta["route_id"]))
    groups = GroupIndex(
        category_ids=np.asarray(cat_ids),
        graph_ids=np.asarray(graph_ids),
        route_ids=np.asarray(route_ids),
    )
    return Dataset(entries=tuple(scenarios), groups=groups)
