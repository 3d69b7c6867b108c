"""Segmentation backends: anything mapping an image (or crop) to a ProbMap.

Two implementations share one interface:

  - OracleBackend renders probability maps from ground-truth annotations,
    optionally degraded by blur, block-striding, and additive noise.  A heavily
    degraded oracle plays the role of a coarse low-resolution network; a mild
    one plays the fine network.
  - FileBackend replays maps stored as .fpm files, one per (image, window) key,
    so externally produced maps can drive the identical pipeline.

RecordingBackend wraps either and persists every map it produces, which is how
`segment` runs create the files a later FileBackend consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .core import (
    BBox,
    ContractError,
    DataError,
    ImageU8,
    LabelSet,
    ProbMap,
    derive_rng,
    resize_labelmap_nearest,
)
from .dataset import (
    ObjectAnnotation,
    SceneAnnotation,
    read_fpm,
    write_fpm,
)

BACKEND_KINDS = ("oracle", "file")

# Degradation defaults: the coarse pass simulates a low-resolution network
# (8-pixel stride, wide blur), the fine pass a full-resolution one.
COARSE_DEFAULTS = {"stride": 8, "blur_radius": 6}
FINE_DEFAULTS = {"stride": 1, "blur_radius": 1}


@dataclass(frozen=True)
class WindowKey:
    """Identifies one segmentation request: image id plus optional subwindow."""

    image_id: str
    window: BBox | None = None  # None means the full image

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ContractError("window key needs a nonempty image id")

    @property
    def tag(self) -> str:
        if self.window is None:
            return "full"
        b = self.window
        return f"{b.x0}_{b.y0}_{b.x1}_{b.y1}"

    @property
    def filename(self) -> str:
        return f"{self.image_id}__{self.tag}.fpm"


@dataclass(frozen=True)
class SegBackendSpec:
    """Parsed backend description: oracle degradation knobs or a map directory."""

    kind: str
    map_dir: str | None = None
    sigma: float = 0.0
    blur_radius: int = 0
    stride: int = 1

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ContractError(f"backend kind must be one of {BACKEND_KINDS}")
        if self.kind == "file" and not self.map_dir:
            raise ContractError("file backend needs a map directory")
        if self.sigma < 0:
            raise ContractError(f"noise sigma must be >= 0, got {self.sigma}")
        if self.blur_radius < 0:
            raise ContractError(f"blur radius must be >= 0, got {self.blur_radius}")
        if self.stride < 1:
            raise ContractError(f"stride must be >= 1, got {self.stride}")

    @classmethod
    def parse(cls, text: str, role: str = "fine") -> "SegBackendSpec":
        """Parse 'oracle[:sigma=..,blur=..,stride=..]' or 'file:<dir>'.

        Unspecified oracle knobs fall back to the role's defaults (coarse:
        stride 8 / blur 6; fine: stride 1 / blur 1).
        """
        kind, _, rest = text.partition(":")
        if kind == "file":
            return cls(kind="file", map_dir=rest or None)
        if kind != "oracle":
            raise ContractError(f"unknown backend {text!r}, expected oracle:… or file:…")
        defaults = dict(COARSE_DEFAULTS if role == "coarse" else FINE_DEFAULTS)
        fields = {"sigma": 0.0, **defaults}
        if rest:
            for item in rest.split(","):
                k, sep, v = item.partition("=")
                if not sep:
                    raise ContractError(f"bad backend option {item!r}, expected key=value")
                if k == "sigma":
                    fields["sigma"] = float(v)
                elif k == "blur":
                    fields["blur_radius"] = int(v)
                elif k == "stride":
                    fields["stride"] = int(v)
                else:
                    raise ContractError(f"unknown backend option {k!r}")
        return cls(kind="oracle", **fields)

    @property
    def tag(self) -> str:
        if self.kind == "file":
            return f"file:{self.map_dir}"
        return f"oracle:s{self.stride}:b{self.blur_radius}:n{self.sigma!r}"


def render_groundtruth(
    annotation: SceneAnnotation, dims: tuple[int, int], labels: LabelSet
) -> np.ndarray:
    """Per-pixel label indices from an annotation; later layers overpaint earlier.

    Paint order is bg < face < hands < objects, so an action object held at the
    mouth keeps its own label where it occludes the face.
    """
    h, w = dims
    out = np.zeros((h, w), dtype=np.intp)
    if annotation.face is not None:
        fb = annotation.face.clipped(dims)
        if fb is not None:
            out[fb.y0 : fb.y1, fb.x0 : fb.x1] = labels.face
    for hb in annotation.hands:
        hb = hb.clipped(dims)
        if hb is not None:
            out[hb.y0 : hb.y1, hb.x0 : hb.x1] = labels.hand
    for obj in annotation.objects:
        channel = labels.index_of(obj.label)
        ob = obj.bbox.clipped(dims)
        if ob is None:
            continue
        sub = obj.mask[
            ob.y0 - obj.bbox.y0 : ob.y1 - obj.bbox.y0,
            ob.x0 - obj.bbox.x0 : ob.x1 - obj.bbox.x0,
        ]
        view = out[ob.y0 : ob.y1, ob.x0 : ob.x1]
        view[sub] = channel
    return out


def clip_annotation(annotation: SceneAnnotation, window: BBox) -> SceneAnnotation:
    """Translate an annotation into a window's coordinate frame, dropping
    geometry that falls outside it."""
    dims = (window.height, window.width)

    def shift(b: BBox) -> BBox | None:
        return BBox(
            b.x0 - window.x0, b.y0 - window.y0, b.x1 - window.x0, b.y1 - window.y0
        ).clipped(dims)

    face = None if annotation.face is None else shift(annotation.face)
    hands = tuple(b for b in (shift(h) for h in annotation.hands) if b is not None)
    objects = []
    for obj in annotation.objects:
        nb = shift(obj.bbox)
        if nb is None:
            continue
        oy = obj.bbox.y0 - window.y0
        ox = obj.bbox.x0 - window.x0
        sub = obj.mask[nb.y0 - oy : nb.y1 - oy, nb.x0 - ox : nb.x1 - ox]
        if sub.any():
            objects.append(ObjectAnnotation(label=obj.label, bbox=nb, mask=sub.copy()))
    return SceneAnnotation(
        image_id=annotation.image_id,
        class_name=annotation.class_name,
        face=face,
        hands=hands,
        objects=tuple(objects),
    )


def _block_mean_upsample(arr: np.ndarray, stride: int) -> np.ndarray:
    """Replace each stride x stride block (smaller at edges) by its mean."""
    h, w = arr.shape[:2]
    yb = np.arange(0, h, stride)
    xb = np.arange(0, w, stride)
    sums = np.add.reduceat(np.add.reduceat(arr, yb, axis=0), xb, axis=1)
    ylen = np.diff(np.append(yb, h))
    xlen = np.diff(np.append(xb, w))
    means = sums / (ylen[:, None, None] * xlen[None, :, None])
    return np.repeat(np.repeat(means, ylen, axis=0), xlen, axis=1)


class OracleBackend:
    """Renders (optionally degraded) probability maps from ground truth.

    The degradation order is fixed: one-hot render, box blur, block striding,
    additive Gaussian noise, clamp, renormalize.  Noise streams are derived
    from (seed, backend spec, image id, window), so maps are reproducible per
    key and independent across keys.
    """

    def __init__(self, spec: SegBackendSpec, labels: LabelSet, seed: int = 0):
        if spec.kind != "oracle":
            raise ContractError(f"OracleBackend got spec kind {spec.kind!r}")
        self.spec = spec
        self.labels = labels
        self.seed = seed

    def segment(
        self,
        image: ImageU8,
        annotation: SceneAnnotation | None,
        key: WindowKey,
    ) -> ProbMap:
        if annotation is None:
            raise ContractError("oracle backend needs the scene annotation")
        if key.window is None:
            labelmap = render_groundtruth(annotation, image.dims, self.labels)
        else:
            win = key.window
            local = clip_annotation(annotation, win)
            labelmap = render_groundtruth(local, (win.height, win.width), self.labels)
            if (win.height, win.width) != image.dims:
                labelmap = resize_labelmap_nearest(labelmap, *image.dims)
        n = len(self.labels)
        arr = np.zeros((image.height, image.width, n), dtype=np.float64)
        np.put_along_axis(arr, labelmap[:, :, None], 1.0, axis=2)
        if self.spec.blur_radius > 0:
            k = 2 * self.spec.blur_radius + 1
            arr = uniform_filter(arr, size=(k, k, 1), mode="nearest")
        if self.spec.stride > 1:
            arr = _block_mean_upsample(arr, self.spec.stride)
        if self.spec.sigma > 0:
            rng = derive_rng(self.seed, "segnoise", self.spec.tag, key.image_id, key.tag)
            arr = arr + rng.normal(0.0, self.spec.sigma, size=arr.shape)
            np.clip(arr, 0.0, 1.0, out=arr)
            sums = arr.sum(axis=2)
            dead = sums <= 0.0  # all channels clamped away: no evidence left
            if dead.any():
                arr[dead] = 1.0 / n
                sums[dead] = 1.0
            arr = arr / sums[:, :, None]
        return ProbMap(arr.astype(np.float32), self.labels)


class FileBackend:
    """Replays stored .fpm maps keyed by (image id, window) filenames."""

    def __init__(self, spec: SegBackendSpec, labels: LabelSet | None = None):
        if spec.kind != "file":
            raise ContractError(f"FileBackend got spec kind {spec.kind!r}")
        self.spec = spec
        self.map_dir = Path(spec.map_dir)
        self.labels = labels

    def segment(
        self,
        image: ImageU8,
        annotation: SceneAnnotation | None,
        key: WindowKey,
    ) -> ProbMap:
        path = self.map_dir / key.filename
        if not path.is_file():
            raise DataError(
                f"no stored map for image {key.image_id!r} window {key.tag} "
                f"(looked for {path})"
            )
        pmap = read_fpm(path)
        if self.labels is None:
            self.labels = pmap.labels
        elif pmap.labels != self.labels:
            raise DataError(
                f"{path}: label set {pmap.labels.names} does not match "
                f"backend labels {self.labels.names}"
            )
        if pmap.dims != image.dims:
            raise DataError(
                f"{path}: stored map is {pmap.dims}, request is {image.dims}"
            )
        return pmap


class RecordingBackend:
    """Wraps a backend and writes every map it produces under a directory."""

    def __init__(self, inner, out_dir: str | Path):
        self.inner = inner
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def labels(self):
        return self.inner.labels

    def segment(self, image, annotation, key: WindowKey) -> ProbMap:
        pmap = self.inner.segment(image, annotation, key)
        write_fpm(self.out_dir / key.filename, pmap)
        return pmap


def make_backend(spec: SegBackendSpec, labels: LabelSet | None, seed: int = 0):
    if spec.kind == "oracle":
        if labels is None:
            raise ContractError("oracle backend needs a label set")
        return OracleBackend(spec, labels, seed)
    return FileBackend(spec, labels)


def segment(backend, image: ImageU8, annotation, key: WindowKey) -> ProbMap:
    """Free-function form of the backend contract."""
    return backend.segment(image, annotation, key)
