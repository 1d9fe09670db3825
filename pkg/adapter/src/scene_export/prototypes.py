"""Per-class appearance prototypes from single example images."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import nearest_valid_size


class PrototypeError(Exception):
    pass


def _patch_mask(mask_path, patch_size: int, grid_shape: tuple[int, int]) -> np.ndarray:
    """Pixel mask -> boolean patch grid; a patch counts when at least half
    its pixels are masked."""
    h_f, w_f = grid_shape
    with Image.open(mask_path) as img:
        mask_img = img.convert("L")
        target = nearest_valid_size(mask_img.size[0], mask_img.size[1], patch_size)
        if mask_img.size != target:
            mask_img = mask_img.resize(target, Image.NEAREST)
        mask = np.asarray(mask_img) > 0
    grid = mask.reshape(h_f, patch_size, w_f, patch_size).mean(axis=(1, 3))
    return grid >= 0.5


def export_prototypes(entries, encoder, out_path) -> list[dict]:
    """Write ``prototypes.json`` from (class_name, image_path, mask_path)
    triples; ``mask_path`` may be None to use the whole image.

    Each prototype is the mean patch feature inside the mask, L2-normalized.
    """
    if not entries:
        raise PrototypeError("no prototype classes given")
    results = []
    seen_vectors: dict[str, np.ndarray] = {}
    for class_name, image_path, mask_path in entries:
        encoded = encoder.encode(image_path)
        h_f, w_f, _ = encoded.data.shape
        if mask_path is None:
            selected = encoded.data.reshape(-1, encoded.data.shape[2])
        else:
            grid = _patch_mask(mask_path, encoded.patch_size, (h_f, w_f))
            if grid.shape != (h_f, w_f):
                raise PrototypeError(
                    f"{mask_path}: mask grid {grid.shape} does not match feature grid {(h_f, w_f)}"
                )
            if not grid.any():
                raise PrototypeError(f"{mask_path}: mask selects no patches")
            selected = encoded.data[grid]
        vector = selected.mean(axis=0).astype(np.float64)
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise PrototypeError(f"{image_path}: zero prototype vector")
        vector = vector / norm
        for other, vec in seen_vectors.items():
            if np.allclose(vec, vector, atol=1e-9):
                warnings.warn(
                    f"prototype for {class_name!r} is identical to {other!r}",
                    RuntimeWarning,
                    stacklevel=2,
                )
        seen_vectors[class_name] = vector
        results.append({"class_name": class_name, "vector": [float(v) for v in vector]})
    Path(out_path).write_text(json.dumps(results, indent=1))
    return results
