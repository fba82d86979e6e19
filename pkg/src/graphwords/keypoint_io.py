"""Keypoint records, dataset manifests and seed selection."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")


@dataclass(frozen=True)
class KeyPoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    descriptor: tuple[float, ...]

    def __post_init__(self):
        if not self.scale > 0:
            raise DataFormatError(f"keypoint scale must be > 0, got {self.scale}")
        if not self.response >= 0:
            raise DataFormatError(f"keypoint response must be >= 0, got {self.response}")

    def to_json(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "scale": self.scale,
            "orientation": self.orientation,
            "response": self.response,
            "descriptor": list(self.descriptor),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KeyPoint":
        return cls(
            x=float(obj["x"]),
            y=float(obj["y"]),
            scale=float(obj["scale"]),
            orientation=float(obj["orientation"]),
            response=float(obj["response"]),
            descriptor=tuple(float(v) for v in obj["descriptor"]),
        )


@dataclass(frozen=True)
class ImageRecord:
    """Keypoints of one image, already cropped to the object bounding box."""

    image_id: str
    object_label: str
    scene_id: str
    split: str
    keypoints: tuple[KeyPoint, ...] = field(default=())

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataFormatError(f"{self.image_id}: split must be one of {SPLITS}, got {self.split!r}")
        object.__setattr__(self, "keypoints", tuple(self.keypoints))

    def __len__(self) -> int:
        return len(self.keypoints)

    @cached_property
    def positions(self) -> np.ndarray:
        if not self.keypoints:
            return np.zeros((0, 2))
        return np.array([(kp.x, kp.y) for kp in self.keypoints], dtype=float)

    @cached_property
    def descriptors(self) -> np.ndarray:
        if not self.keypoints:
            return np.zeros((0, 0))
        return np.array([kp.descriptor for kp in self.keypoints], dtype=float)

    @cached_property
    def responses(self) -> np.ndarray:
        return np.array([kp.response for kp in self.keypoints], dtype=float)

    def with_split(self, split: str) -> "ImageRecord":
        return ImageRecord(self.image_id, self.object_label, self.scene_id, split, self.keypoints)


@dataclass(frozen=True)
class SeedSet:
    seed_indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.seed_indices)

    def __iter__(self):
        return iter(self.seed_indices)


def select_seeds(keypoints: Sequence[KeyPoint], n_seeds: int) -> SeedSet:
    """Pick the ``n_seeds`` strongest keypoints.

    Order is descending response; equal responses are ordered by ascending
    ``(y, x)`` and then by position in the input list.
    """
    if n_seeds < 1:
        raise ValueError(f"n_seeds must be >= 1, got {n_seeds}")
    order = sorted(
        range(len(keypoints)),
        key=lambda i: (-keypoints[i].response, keypoints[i].y, keypoints[i].x, i),
    )
    return SeedSet(tuple(order[:n_seeds]))


def _read_keypoint_file(path: Path, image_id: str, descriptor_dim: int) -> list[KeyPoint]:
    if not path.is_file():
        raise FileNotFoundError(f"keypoint file not found: {path}")
    points = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                kp = KeyPoint.from_json(obj)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{image_id}: bad keypoint at {path}:{lineno}: {exc}") from exc
            if len(kp.descriptor) != descriptor_dim:
                raise DataFormatError(
                    f"{image_id}: descriptor length {len(kp.descriptor)} at {path}:{lineno}, "
                    f"expected {descriptor_dim}"
                )
            points.append(kp)
    return points


def load_dataset(manifest_path: str | Path) -> list[ImageRecord]:
    """Load every image listed in a manifest, in manifest order."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        descriptor_dim = int(manifest["descriptor_dim"])
        entries = manifest["images"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"cannot parse manifest {manifest_path}: {exc}") from exc

    base = manifest_path.parent
    records = []
    seen = set()
    for entry in entries:
        image_id = str(entry["image_id"])
        if image_id in seen:
            raise DataFormatError(f"duplicate image_id {image_id!r} in {manifest_path}")
        seen.add(image_id)
        kp_path = base / entry["keypoint_file"]
        keypoints = _read_keypoint_file(kp_path, image_id, descriptor_dim)
        records.append(
            ImageRecord(
                image_id=image_id,
                object_label=str(entry["object_label"]),
                scene_id=str(entry.get("scene_id", "")),
                split=str(entry["split"]),
                keypoints=tuple(keypoints),
            )
        )
    return records


def dataset_descriptor_dim(records: Iterable[ImageRecord], default: int = 64) -> int:
    for rec in records:
        if rec.keypoints:
            return len(rec.keypoints[0].descriptor)
    return default


def save_dataset(
    records: Sequence[ImageRecord],
    directory: str | Path,
    descriptor_dim: int | None = None,
    manifest_name: str = "manifest.json",
) -> Path:
    """Write a manifest plus one JSON Lines keypoint file per image."""
    directory = Path(directory)
    (directory / "keypoints").mkdir(parents=True, exist_ok=True)
    if descriptor_dim is None:
        descriptor_dim = dataset_descriptor_dim(records)
    images = []
    for rec in records:
        rel = f"keypoints/{rec.image_id}.jsonl"
        with (directory / rel).open("w") as fh:
            for kp in rec.keypoints:
                if len(kp.descriptor) != descriptor_dim:
                    raise DataFormatError(f"{rec.image_id}: descriptor length {len(kp.descriptor)}")
                fh.write(json.dumps(kp.to_json()) + "\n")
        images.append(
            {
                "image_id": rec.image_id,
                "object_label": rec.object_label,
                "scene_id": rec.scene_id,
                "split": rec.split,
                "keypoint_file": rel,
            }
        )
    manifest_path = directory / manifest_name
    manifest_path.write_text(json.dumps({"descriptor_dim": descriptor_dim, "images": images}, indent=1) + "\n")
    return manifest_path

