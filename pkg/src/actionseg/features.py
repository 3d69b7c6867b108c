"""Classification feature assembly.

A candidate's feature vector concatenates five fixed blocks:

  G    whole-image appearance            (D_a floats)
  C    per-channel maxima of the coarse map   (|L| floats)
  F    per-channel maxima of the fine map     (|L| floats)
  Face appearance of the 2x-scaled face crop  (D_a floats)
  Obj  candidate appearance, plain box crop followed by the masked crop
       with out-of-mask pixels set to the dataset mean (2 * D_a floats)

Appearance comes from a fixed built-in extractor (16x16 grayscale downsample
plus per-channel color histograms, D_a = 352) or an external command hooked in
through a PPM-out / raw-f32-in file handshake.  The block layout, with its
checksum, travels inside the model bundle so train and inference can never
disagree about where a block sits.
"""

from __future__ import annotations

import os
import struct
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    BBox,
    ContractError,
    DataError,
    ImageU8,
    LabelSet,
    ProbMap,
    RegionMask,
    crop_resize,
    round_half_up,
    scale_bbox,
)

BUILTIN_DIM = 352  # 16*16 grayscale + 3 * 32-bin histograms
_GRAY_SIDE = 16
_HIST_BINS = 32

BLOCK_NAMES = ("G", "C", "F", "Face", "Obj")


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; stable fingerprint for layout descriptors."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class FeatureLayout:
    """Block names, lengths, and offsets of the assembled feature vector."""

    appearance_dim: int
    n_labels: int

    def __post_init__(self) -> None:
        if self.appearance_dim < 1 or self.n_labels < 4:
            raise ContractError(
                f"bad layout dims: appearance {self.appearance_dim}, "
                f"labels {self.n_labels}"
            )

    @property
    def block_lengths(self) -> tuple[int, ...]:
        d, n = self.appearance_dim, self.n_labels
        return (d, n, n, d, 2 * d)

    @property
    def total(self) -> int:
        return sum(self.block_lengths)

    def offsets(self) -> dict[str, tuple[int, int]]:
        out = {}
        pos = 0
        for name, length in zip(BLOCK_NAMES, self.block_lengths):
            out[name] = (pos, pos + length)
            pos += length
        return out

    @property
    def descriptor(self) -> str:
        return "|".join(
            f"{name}:{length}"
            for name, length in zip(BLOCK_NAMES, self.block_lengths)
        )

    @property
    def checksum(self) -> int:
        return fnv1a64(self.descriptor.encode("ascii"))

    def mask_without(self, removed: tuple[str, ...]) -> np.ndarray:
        """1.0 everywhere except the removed blocks, which are zeroed."""
        for name in removed:
            if name not in BLOCK_NAMES:
                raise ContractError(
                    f"unknown feature block {name!r}, expected one of {BLOCK_NAMES}"
                )
        if set(removed) == set(BLOCK_NAMES):
            raise ContractError("cannot remove every feature block")
        mask = np.ones(self.total, dtype=np.float64)
        spans = self.offsets()
        for name in removed:
            a, b = spans[name]
            mask[a:b] = 0.0
        return mask


class BuiltinExtractor:
    """Fixed appearance descriptor: gray thumbnail plus color histograms."""

    dim = BUILTIN_DIM

    def extract(self, img: ImageU8) -> np.ndarray:
        data = img.data.astype(np.float64)
        if img.channels == 3:
            gray = data[:, :, 0] * 0.299 + data[:, :, 1] * 0.587 + data[:, :, 2] * 0.114
            planes = [img.data[:, :, c] for c in range(3)]
        else:
            gray = data[:, :, 0]
            planes = [img.data[:, :, 0]] * 3
        thumb = crop_resize(
            ImageU8(np.clip(np.floor(gray + 0.5), 0, 255).astype(np.uint8)),
            BBox(0, 0, img.width, img.height),
            (_GRAY_SIDE, _GRAY_SIDE),
        )
        parts = [thumb.data.astype(np.float64).ravel() / 255.0]
        for plane in planes:
            hist = np.bincount(
                (plane.ravel() // (256 // _HIST_BINS)).astype(np.int64),
                minlength=_HIST_BINS,
            ).astype(np.float64)
            parts.append(hist / plane.size)
        return np.concatenate(parts)


class ExternalExtractor:
    """Appearance via an external command: crop out as PPM, vector back as f32.

    The command is run as `cmd <crop.ppm> <out.f32>` and must write exactly
    `dim` little-endian 32-bit floats.
    """

    def __init__(self, command: str, dim: int):
        if dim < 1:
            raise ContractError(f"extractor dimension must be >= 1, got {dim}")
        self.command = command
        self.dim = dim

    def extract(self, img: ImageU8) -> np.ndarray:
        from .dataset import write_image

        with tempfile.TemporaryDirectory(prefix="appearance-") as tmp:
            crop_path = Path(tmp) / "crop.ppm"
            out_path = Path(tmp) / "features.f32"
            write_image(crop_path, img)
            result = subprocess.run(
                [*self.command.split(), str(crop_path), str(out_path)],
                capture_output=True,
                text=True,
            )
            if result.returncode != 0:
                raise DataError(
                    f"extractor command failed ({result.returncode}): "
                    f"{result.stderr.strip()}"
                )
            raw = out_path.read_bytes()
        if len(raw) != 4 * self.dim:
            raise DataError(
                f"extractor wrote {len(raw)} bytes, expected {4 * self.dim} "
                f"({self.dim} float32 values)"
            )
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def make_extractor(text: str):
    """Build an extractor from its description: 'builtin' or 'external:<dim>:<cmd>'."""
    if text == "builtin":
        return BuiltinExtractor()
    if text.startswith("external:"):
        try:
            _, dim, command = text.split(":", 2)
            return ExternalExtractor(command, int(dim))
        except ValueError as e:
            raise ContractError(
                f"bad extractor {text!r}, expected external:<dim>:<command>"
            ) from e
    raise ContractError(f"unknown extractor {text!r}")


def global_net_scores(pmap: ProbMap) -> np.ndarray:
    """Per-channel maxima over the whole map, body parts included."""
    return pmap.data.max(axis=(0, 1)).astype(np.float64)


def masked_crop(
    image: ImageU8, region: RegionMask, mean_value: np.ndarray
) -> ImageU8:
    """Crop the region box; replace out-of-mask pixels with the dataset mean."""
    box = region.bbox.clipped(image.dims)
    if box is None:
        raise ContractError(
            f"region box {region.bbox.as_tuple()} lies outside the image"
        )
    mask = region.mask[
        box.y0 - region.bbox.y0 : box.y1 - region.bbox.y0,
        box.x0 - region.bbox.x0 : box.x1 - region.bbox.x0,
    ]
    if not mask.any():
        raise ContractError("region mask is empty inside the image")
    mean = np.asarray(mean_value, dtype=np.float64).ravel()
    if mean.shape[0] != image.channels:
        raise ContractError(
            f"mean value has {mean.shape[0]} channels, image has {image.channels}"
        )
    fill = np.clip(np.floor(mean + 0.5), 0, 255).astype(np.uint8)
    crop = image.data[box.y0 : box.y1, box.x0 : box.x1].copy()
    crop[~mask] = fill
    return ImageU8(crop)


def plain_crop(image: ImageU8, bbox: BBox) -> ImageU8:
    box = bbox.clipped(image.dims)
    if box is None:
        raise ContractError(f"crop box {bbox.as_tuple()} lies outside the image")
    return ImageU8(image.data[box.y0 : box.y1, box.x0 : box.x1].copy())


def face_region(annotation, dims: tuple[int, int]) -> BBox:
    """The annotated face box scaled 2x about its center; whole image if absent."""
    if annotation is None or annotation.face is None:
        h, w = dims
        return BBox(0, 0, w, h)
    return scale_bbox(annotation.face, 2.0, bounds=dims)


def assemble_features(
    image: ImageU8,
    coarse: ProbMap,
    fine: ProbMap,
    face_box: BBox,
    region: RegionMask,
    extractor,
    mean_value: np.ndarray,
) -> np.ndarray:
    """Concatenate the [G, C, F, Face, Obj] blocks for one candidate."""
    blocks = [
        extractor.extract(image),
        global_net_scores(coarse),
        global_net_scores(fine),
        extractor.extract(plain_crop(image, face_box)),
        extractor.extract(plain_crop(image, region.bbox)),
        extractor.extract(masked_crop(image, region, mean_value)),
    ]
    out = np.concatenate(blocks)
    expected = FeatureLayout(extractor.dim, len(coarse.labels)).total
    if out.shape[0] != expected:
        raise ContractError(
            f"assembled {out.shape[0]} features, layout expects {expected}"
        )
    return out


def dataset_mean(images) -> np.ndarray:
    """Per-channel mean pixel value over an iterable of ImageU8."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    channels = None
    for img in images:
        if channels is None:
            channels = img.channels
            total = np.zeros(channels, dtype=np.float64)
        elif img.channels != channels:
            raise ContractError("cannot mix grayscale and color images in one mean")
        total += img.data.reshape(-1, channels).sum(axis=0, dtype=np.float64)
        count += img.height * img.width
    if count == 0:
        raise ContractError("dataset mean needs at least one image")
    return total / count
