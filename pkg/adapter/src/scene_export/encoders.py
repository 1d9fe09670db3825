"""Image-to-feature-map encoders.

Every encoder maps an RGB image to a channels-last float32 patch grid and
states its patch size. Images whose sides are not multiples of the patch
size are resized down to the nearest multiple first (the caller must scale
the camera calibration accordingly; see export.resize_policy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class EncodedImage:
    data: np.ndarray  # (H_F, W_F, C) float32
    patch_size: int
    input_size: tuple[int, int]  # (W, H) actually encoded


def nearest_valid_size(width: int, height: int, patch_size: int) -> tuple[int, int]:
    """Largest (W, H) not exceeding the input that the encoder accepts."""
    return (
        max(patch_size, (width // patch_size) * patch_size),
        max(patch_size, (height // patch_size) * patch_size),
    )


def _load_rgb(image_path, target_size: tuple[int, int]) -> np.ndarray:
    with Image.open(image_path) as img:
        rgb = img.convert("RGB")
        if rgb.size != target_size:
            rgb = rgb.resize(target_size, Image.BILINEAR)
        return np.asarray(rgb, dtype=np.float32) / 255.0


class ColorPatchEncoder:
    """Deterministic local encoder: per-patch color statistics lifted to
    ``dim`` channels through a fixed random projection.

    Not a learned model; it exists so exports and tests run without any
    model weights while exercising the full feature path.
    """

    name = "color"

    def __init__(self, patch_size: int = 14, dim: int = 16):
        self.patch_size = int(patch_size)
        self.dim = int(dim)
        rng = np.random.default_rng(0xC01AB)
        self._projection = rng.normal(0.0, 1.0, size=(6, self.dim)).astype(np.float32)

    @property
    def identifier(self) -> str:
        return f"color:p{self.patch_size}:d{self.dim}"

    def encode_array(self, rgb: np.ndarray) -> EncodedImage:
        h, w, _ = rgb.shape
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"image {w}x{h} is not a multiple of patch size {p}")
        grid = rgb.reshape(h // p, p, w // p, p, 3)
        means = grid.mean(axis=(1, 3))
        stds = grid.std(axis=(1, 3))
        base = np.concatenate([means, stds], axis=-1)  # (H_F, W_F, 6)
        data = base @ self._projection
        return EncodedImage(data=data.astype(np.float32), patch_size=p, input_size=(w, h))

    def encode(self, image_path) -> EncodedImage:
        with Image.open(image_path) as img:
            width, height = img.size
        target = nearest_valid_size(width, height, self.patch_size)
        return self.encode_array(_load_rgb(image_path, target))


class TorchPatchEncoder:
    """Vision-transformer patch features from a locally available model.

    Loads a ``transformers`` vision model from a local path or identifier
    and reshapes its patch token grid into the feature map. Requires the
    optional ``vit`` extra; never exercised in the test suite because model
    weights are not shipped.
    """

    name = "vit"

    def __init__(self, model_path: str, patch_size: int = 14):
        import torch  # noqa: F401  (fail fast with a clear error)
        from transformers import AutoImageProcessor, AutoModel

        self.patch_size = int(patch_size)
        self._processor = AutoImageProcessor.from_pretrained(model_path)
        self._model = AutoModel.from_pretrained(model_path).eval()
        self._model_path = model_path

    @property
    def identifier(self) -> str:
        return f"vit:{self._model_path}:p{self.patch_size}"

    def encode(self, image_path) -> EncodedImage:
        import torch

        with Image.open(image_path) as img:
            width, height = img.size
        target = nearest_valid_size(width, height, self.patch_size)
        rgb = _load_rgb(image_path, target)
        inputs = self._processor(
            images=(rgb * 255).astype(np.uint8),
            return_tensors="pt",
            do_resize=False,
        )
        with torch.no_grad():
            out = self._model(**inputs)
        tokens = out.last_hidden_state[0]
        h_f, w_f = target[1] // self.patch_size, target[0] // self.patch_size
        grid = tokens[-h_f * w_f :].reshape(h_f, w_f, -1)  # strip CLS/register tokens
        return EncodedImage(
            data=grid.numpy().astype(np.float32), patch_size=self.patch_size, input_size=target
        )


def build_encoder(spec: str):
    """Encoder factory for CLI-style identifiers.

    ``color``, ``color:dim=32,patch=8``, or ``vit:<model-path>``.
    """
    if spec == "color":
        return ColorPatchEncoder()
    if spec.startswith("color:"):
        kwargs = {}
        for part in spec[len("color:"):].split(","):
            key, _, value = part.partition("=")
            if key == "dim":
                kwargs["dim"] = int(value)
            elif key == "patch":
                kwargs["patch_size"] = int(value)
            else:
                raise ValueError(f"unknown color encoder option {key!r}")
        return ColorPatchEncoder(**kwargs)
    if spec.startswith("vit:"):
        return TorchPatchEncoder(spec[len("vit:"):])
    raise ValueError(f"unknown encoder {spec!r}")
