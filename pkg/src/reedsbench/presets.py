"""Resolution/frame-rate presets, scale-to-cover geometry and rate decimation.

Every evaluation preset is a (width, height, rate) triple. Frames are scaled
uniformly until both dimensions cover the preset, then the overflow is cropped
around the image center. Rates are reduced by picking, for every ideal output
tick, the source frame whose timestamp is nearest.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

#: Marker for the "91/40" rows: the stream keeps its native rate
#: (91 Hz mono, 40 Hz color).
NATIVE = "91/40"

NS_PER_S = 1_000_000_000


class PresetError(ValueError):
    pass


@dataclass(frozen=True)
class Preset:
    preset_id: int
    width: int
    height: int
    rate: float | str  # Hz, or NATIVE

    @property
    def native_rate(self) -> bool:
        return self.rate == NATIVE

    def effective_rate(self, stream_rate: float) -> float:
        """Rate frames are delivered at for a stream of ``stream_rate`` Hz."""
        return float(stream_rate) if self.native_rate else float(self.rate)

    @property
    def label(self) -> str:
        rate = self.rate if self.native_rate else f"{self.rate:g}"
        return f"{self.width}x{self.height}@{rate}"


_RESOLUTIONS = ((3208, 2200), (1920, 1280), (1382, 512), (1280, 720))
_RATE_BANDS = (NATIVE, 30, 10)

PRESETS: tuple[Preset, ...] = tuple(
    Preset(band * len(_RESOLUTIONS) + i, w, h, rate)
    for band, rate in enumerate(_RATE_BANDS)
    for i, (w, h) in enumerate(_RESOLUTIONS)
)
PRESETS_BY_ID = {p.preset_id: p for p in PRESETS}


def get_preset(preset_id: int) -> Preset:
    try:
        return PRESETS_BY_ID[int(preset_id)]
    except (KeyError, ValueError):
        raise PresetError(f"unknown preset: {preset_id!r}") from None


def parse_presets(text: str | Iterable[int] | None) -> list[Preset]:
    """Resolve ``"all"``, ``"0,4,8"``, ``"0-3"`` or an id iterable to presets in table order."""
    if text is None or text == "all":
        return list(PRESETS)
    ids: list[int] = []
    try:
        if isinstance(text, str):
            for part in text.split(","):
                part = part.strip()
                if not part:
                    raise PresetError(f"bad preset list {text!r}")
                if "-" in part:
                    lo, hi = part.split("-", 1)
                    if int(hi) < int(lo):
                        raise PresetError(f"bad preset range {part!r}")
                    ids.extend(range(int(lo), int(hi) + 1))
                else:
                    ids.append(int(part))
        else:
            ids = [int(i) for i in text]
    except ValueError:
        raise PresetError(f"bad preset list {text!r}") from None
    if not ids:
        raise PresetError("no presets selected")
    if len(set(ids)) != len(ids):
        raise PresetError("duplicate preset ids")
    return sorted((get_preset(i) for i in ids), key=lambda p: p.preset_id)


def presets_csv(presets: Sequence[Preset] = PRESETS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["preset_id", "width", "height", "rate"])
    for p in presets:
        writer.writerow([p.preset_id, p.width, p.height, p.rate])
    return buf.getvalue()


# --------------------------------------------------------------------------
# spatial


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


@dataclass(frozen=True)
class CropGeometry:
    src_w: int
    src_h: int
    scale_factor: float
    scaled_w: int
    scaled_h: int
    crop_x: int
    crop_y: int
    out_w: int
    out_h: int

    @property
    def identity(self) -> bool:
        return (self.scaled_w, self.scaled_h, self.crop_x, self.crop_y) == (
            self.src_w, self.src_h, 0, 0) and (self.out_w, self.out_h) == (self.src_w, self.src_h)

    @property
    def upscales(self) -> bool:
        return self.scaled_w > self.src_w or self.scaled_h > self.src_h

    def map_point(self, x: float, y: float) -> tuple[float, float]:
        """Native pixel coordinates -> output coordinates (may fall outside)."""
        sx = self.scaled_w / self.src_w
        sy = self.scaled_h / self.src_h
        return x * sx - self.crop_x, y * sy - self.crop_y

    def map_box(self, x: int, y: int, w: int, h: int) -> tuple[int, int, int, int] | None:
        """Map a native (x, y, w, h) box into output pixels, clipped.

        Edges are mapped with the effective per-axis ratio of the resampler,
        rounded half-up, then clipped to the output frame. Returns None when
        nothing of the box survives the crop.
        """
        fx = Fraction(self.scaled_w, self.src_w)
        fy = Fraction(self.scaled_h, self.src_h)
        x0 = min(max(_round_half_up(x * fx) - self.crop_x, 0), self.out_w)
        x1 = min(max(_round_half_up((x + w) * fx) - self.crop_x, 0), self.out_w)
        y0 = min(max(_round_half_up(y * fy) - self.crop_y, 0), self.out_h)
        y1 = min(max(_round_half_up((y + h) * fy) - self.crop_y, 0), self.out_h)
        if x1 <= x0 or y1 <= y0:
            return None
        return x0, y0, x1 - x0, y1 - y0


def crop_geometry(src_w: int, src_h: int, preset: Preset) -> CropGeometry:
    if min(src_w, src_h, preset.width, preset.height) <= 0:
        raise PresetError("dimensions must be positive")
    s = max(Fraction(preset.width, src_w), Fraction(preset.height, src_h))
    scaled_w = _round_half_up(src_w * s)
    scaled_h = _round_half_up(src_h * s)
    # the covering axis lands exactly on the target, the other rounds to >= target
    assert scaled_w >= preset.width and scaled_h >= preset.height
    return CropGeometry(
        src_w=src_w,
        src_h=src_h,
        scale_factor=float(s),
        scaled_w=scaled_w,
        scaled_h=scaled_h,
        crop_x=(scaled_w - preset.width) // 2,
        crop_y=(scaled_h - preset.height) // 2,
        out_w=preset.width,
        out_h=preset.height,
    )


def _area_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sparse (row, col, weight) triplets of a 1-D area-averaging operator."""
    rows, cols, vals = [], [], []
    step = Fraction(n_in, n_out)
    for j in range(n_out):
        a, b = j * step, (j + 1) * step
        for i in range(math.floor(a), min(math.ceil(b), n_in)):
            overlap = min(b, i + 1) - max(a, i)
            if overlap > 0:
                rows.append(j)
                cols.append(i)
                vals.append(float(overlap / step))
    return np.asarray(rows), np.asarray(cols), np.asarray(vals)


def resample(frame: np.ndarray, geometry: CropGeometry) -> np.ndarray:
    """Area-average ``frame`` to the scaled size, then take the centered crop.

    ``frame`` is (H, W) or (H, W, C). Output keeps the input dtype. Refuses to
    upscale.
    """
    if frame.shape[0] != geometry.src_h or frame.shape[1] != geometry.src_w:
        raise PresetError(
            f"dimension mismatch: frame {frame.shape[1]}x{frame.shape[0]}, "
            f"geometry expects {geometry.src_w}x{geometry.src_h}")
    if geometry.upscales:
        raise PresetError(
            f"upscale refused: {geometry.src_w}x{geometry.src_h} is smaller than "
            f"{geometry.out_w}x{geometry.out_h}")
    if geometry.identity:
        return frame
    if (geometry.scaled_w, geometry.scaled_h) == (geometry.src_w, geometry.src_h):
        scaled = frame
    else:
        import cv2  # area interpolation with exact fractional pixel coverage

        scaled = cv2.resize(frame, (geometry.scaled_w, geometry.scaled_h),
                            interpolation=cv2.INTER_AREA)
        if frame.ndim == 3 and scaled.ndim == 2:
            scaled = scaled[:, :, None]
    y, x = geometry.crop_y, geometry.crop_x
    return np.ascontiguousarray(scaled[y:y + geometry.out_h, x:x + geometry.out_w])


def resample_reference(frame: np.ndarray, geometry: CropGeometry) -> np.ndarray:
    """Slow float64 area-averaging with explicit weight matrices.

    Used to cross-check :func:`resample`; returns float64 before rounding.
    """
    ry, cy, wy = _area_weights(geometry.src_h, geometry.scaled_h)
    rx, cx, wx = _area_weights(geometry.src_w, geometry.scaled_w)
    my = np.zeros((geometry.scaled_h, geometry.src_h))
    my[ry, cy] = wy
    mx = np.zeros((geometry.scaled_w, geometry.src_w))
    mx[rx, cx] = wx
    data = frame.astype(np.float64)
    if data.ndim == 2:
        scaled = my @ data @ mx.T
    else:
        scaled = np.einsum("ij,jkc,lk->ilc", my, data, mx)
    y, x = geometry.crop_y, geometry.crop_x
    return scaled[y:y + geometry.out_h, x:x + geometry.out_w]


# --------------------------------------------------------------------------
# temporal


def decimate(timestamps: Sequence[int], target_rate: float) -> list[int]:
    """Indices of the frames nearest to each ideal tick ``t0 + j/target_rate``.

    Ticks cover ``[t0, t_last]``. A timestamp equidistant from a tick loses to
    the earlier frame.
    """
    if not timestamps:
        raise PresetError("empty input")
    if target_rate <= 0:
        raise PresetError("target rate must be positive")
    for a, b in zip(timestamps, timestamps[1:]):
        if b <= a:
            raise PresetError("timestamps must be strictly increasing")
    span = timestamps[-1] - timestamps[0]
    if len(timestamps) > 1:
        source_rate = Fraction(len(timestamps) - 1) * NS_PER_S / span
        if Fraction(target_rate) > source_rate * Fraction(1001, 1000):
            raise PresetError(f"target rate {target_rate} exceeds source rate {float(source_rate):.3f}")
    period = Fraction(NS_PER_S) / Fraction(target_rate)
    t0 = timestamps[0]
    selected: list[int] = []
    j = 0
    while (tick := t0 + j * period) <= timestamps[-1]:
        k = bisect.bisect_left(timestamps, tick)
        if k == len(timestamps):
            best = k - 1
        elif k == 0 or timestamps[k] == tick:
            best = k
        else:
            # tie goes to the earlier frame
            best = k if timestamps[k] - tick < tick - timestamps[k - 1] else k - 1
        if not selected or best > selected[-1]:
            selected.append(best)
        j += 1
    return selected
