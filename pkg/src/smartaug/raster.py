"""Image/mask data model and the augmentation operation kernels.

Images are ``uint8`` arrays of shape ``(H, W)`` (grayscale) or ``(H, W, 3)``
(RGB). Masks are ``uint8`` arrays of shape ``(H, W)`` holding class indices,
with ``IGNORE_INDEX`` marking undefined pixels (geometric fill).

Pixel centres sit on integer coordinates; geometric transforms act about the
image centre ``((W - 1) / 2, (H - 1) / 2)`` and are implemented as inverse
maps: every output pixel looks up its source coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

IGNORE_INDEX = 255
MAX_MAGNITUDE = 30

COLOR = "color"
GEOMETRIC = "geometric"
IDENTITY = "identity"


class ContractError(ValueError):
    """Raised when a kernel or mapping receives arguments outside its contract."""


@dataclass(frozen=True)
class OpSpec:
    name: str
    kind: str
    lo: float = 0.0
    hi: float = 0.0
    signed: bool = False
    parameterless: bool = False

    @property
    def range(self) -> tuple[float, float]:
        return (self.lo, self.hi)


_ENHANCE = ("Sharpness", "Color", "Contrast", "Brightness")

COLOR_OPS: tuple[OpSpec, ...] = (
    OpSpec("Sharpness", COLOR, 0.1, 1.9, signed=True),
    OpSpec("AutoContrast", COLOR, 0.0, 1.0, parameterless=True),
    OpSpec("Equalize", COLOR, 0.0, 1.0, parameterless=True),
    OpSpec("Solarize", COLOR, 0.0, 256.0),
    OpSpec("Color", COLOR, 0.1, 1.9, signed=True),
    OpSpec("Contrast", COLOR, 0.1, 1.9, signed=True),
    OpSpec("Brightness", COLOR, 0.1, 1.9, signed=True),
)

GEOMETRIC_OPS: tuple[OpSpec, ...] = (
    OpSpec("Rotate", GEOMETRIC, 0.0, 30.0, signed=True),
    OpSpec("ShearX", GEOMETRIC, 0.0, 0.3, signed=True),
    OpSpec("ShearY", GEOMETRIC, 0.0, 0.3, signed=True),
    OpSpec("TranslateX", GEOMETRIC, 0.0, 0.33, signed=True),
    OpSpec("TranslateY", GEOMETRIC, 0.0, 0.33, signed=True),
)

IDENTITY_OP = OpSpec("Identity", IDENTITY, parameterless=True)

# Used only by DefaultAugment; they always carry an explicit value.
EXTRA_OPS: tuple[OpSpec, ...] = (
    OpSpec("FlipX", GEOMETRIC, parameterless=True),
    OpSpec("Scale", GEOMETRIC, 0.65, 1.35),
)

COLOR_NAMES = tuple(op.name for op in COLOR_OPS)
GEOMETRIC_NAMES = tuple(op.name for op in GEOMETRIC_OPS)
# Op list for SmartSamplingAugment (no Identity).
AUG_NAMES = COLOR_NAMES + GEOMETRIC_NAMES
# Op list for RandAugment(++) and TrivialAugment.
RAND_NAMES = AUG_NAMES + ("Identity",)

OPS: dict[str, OpSpec] = {
    op.name: op for op in COLOR_OPS + GEOMETRIC_OPS + (IDENTITY_OP,) + EXTRA_OPS
}


def get_op(op: OpSpec | str) -> OpSpec:
    if isinstance(op, OpSpec):
        return op
    try:
        return OPS[op]
    except KeyError:
        raise ContractError(
            f"unknown op {op!r}; valid names: {', '.join(RAND_NAMES)}"
        ) from None


def check_magnitude(m) -> int:
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)):
        raise ContractError(f"magnitude must be an integer, got {m!r}")
    if not 0 <= m <= MAX_MAGNITUDE:
        raise ContractError(f"magnitude {m} outside [0, {MAX_MAGNITUDE}]")
    return int(m)


def magnitude_to_param(op: OpSpec | str, m: int, sign: int = 1) -> float | None:
    """Map an integer magnitude in [0, 30] to the op's real parameter.

    Enhancement ops give ``1 + sign * m/30 * 0.9``, Solarize gives the
    threshold ``256 - m/30 * 256``, geometric ops give ``sign * (lo + m/30 *
    (hi - lo))``. Parameterless ops return ``None``.
    """
    op = get_op(op)
    m = check_magnitude(m)
    if sign not in (1, -1):
        raise ContractError(f"sign must be +1 or -1, got {sign!r}")
    if op.parameterless:
        return None
    frac = m / MAX_MAGNITUDE
    if op.name in _ENHANCE:
        return 1.0 + sign * frac * 0.9
    if op.name == "Solarize":
        return 256.0 - frac * 256.0
    if op.kind == GEOMETRIC:
        return sign * (op.lo + frac * (op.hi - op.lo))
    raise ContractError(f"op {op.name} has no magnitude mapping")


# ---------------------------------------------------------------------------
# validation helpers


def check_image(image: np.ndarray) -> np.ndarray:
    if not isinstance(image, np.ndarray) or image.dtype != np.uint8:
        raise ContractError("image must be a uint8 numpy array")
    if image.ndim == 2 or (image.ndim == 3 and image.shape[2] in (1, 3)):
        return image
    raise ContractError(f"image shape {image.shape} is not (H, W) or (H, W, 1|3)")


def check_pair(image: np.ndarray, mask: np.ndarray) -> None:
    check_image(image)
    if not isinstance(mask, np.ndarray) or mask.dtype != np.uint8 or mask.ndim != 2:
        raise ContractError("mask must be a 2-D uint8 numpy array")
    if mask.shape != image.shape[:2]:
        raise ContractError(
            f"image {image.shape[:2]} and mask {mask.shape} dimensions disagree"
        )


def _channels(image: np.ndarray) -> np.ndarray:
    return image[:, :, None] if image.ndim == 2 else image


def _restore(out: np.ndarray, like: np.ndarray) -> np.ndarray:
    return out[:, :, 0] if like.ndim == 2 else out


def _round_clip(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# color kernels


def grayscale(image: np.ndarray) -> np.ndarray:
    """ITU-R 601-2 luma with the usual 16-bit fixed-point weights."""
    img = _channels(image).astype(np.int64)
    if img.shape[2] == 1:
        return img[:, :, 0].astype(np.uint8)
    lum = img[:, :, 0] * 19595 + img[:, :, 1] * 38470 + img[:, :, 2] * 7471 + 0x8000
    return (lum >> 16).astype(np.uint8)


def _blend(degenerate: np.ndarray, image: np.ndarray, factor: float) -> np.ndarray:
    deg = degenerate.astype(np.float64)
    img = image.astype(np.float64)
    return _round_clip(deg + factor * (img - deg))


def brightness(image: np.ndarray, factor: float) -> np.ndarray:
    return _blend(np.zeros_like(image), image, factor)


def contrast(image: np.ndarray, factor: float) -> np.ndarray:
    gray = grayscale(image).astype(np.int64)
    n = gray.size
    mean = (2 * int(gray.sum()) + n) // (2 * n)
    return _blend(np.full_like(image, mean), image, factor)


def color(image: np.ndarray, factor: float) -> np.ndarray:
    if image.ndim == 2 or image.shape[2] == 1:
        return image.copy()
    gray = np.repeat(grayscale(image)[:, :, None], 3, axis=2)
    return _blend(gray, image, factor)


def smooth(image: np.ndarray) -> np.ndarray:
    """3x3 smoothing (centre weight 5, neighbours 1); border pixels untouched."""
    img = _channels(image).astype(np.int64)
    h, w = img.shape[:2]
    out = img.copy()
    if h >= 3 and w >= 3:
        acc = 4 * img[1:-1, 1:-1]
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                acc = acc + img[dy:h - 2 + dy, dx:w - 2 + dx]
        out[1:-1, 1:-1] = (acc + 6) // 13
    return _restore(out.astype(np.uint8), image)


def sharpness(image: np.ndarray, factor: float) -> np.ndarray:
    return _blend(smooth(image), image, factor)


def solarize(image: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(image >= threshold, 255 - image, image).astype(np.uint8)


def autocontrast(image: np.ndarray) -> np.ndarray:
    img = _channels(image)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        ch = img[:, :, c].astype(np.int64)
        lo, hi = int(ch.min()), int(ch.max())
        if hi == lo:
            out[:, :, c] = img[:, :, c]
            continue
        span = hi - lo
        out[:, :, c] = np.clip(((ch - lo) * 510 + span) // (2 * span), 0, 255)
    return _restore(out, image)


def equalize(image: np.ndarray) -> np.ndarray:
    img = _channels(image)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        ch = img[:, :, c]
        hist = np.bincount(ch.ravel(), minlength=256).astype(np.int64)
        nonzero = hist[hist > 0]
        step = (int(nonzero.sum()) - int(nonzero[-1])) // 255
        if step == 0:
            out[:, :, c] = ch
            continue
        before = np.concatenate(([0], np.cumsum(hist)[:-1]))
        lut = np.minimum(255, (step // 2 + before) // step).astype(np.uint8)
        out[:, :, c] = lut[ch]
    return _restore(out, image)


_COLOR_KERNELS: dict[str, Callable] = {
    "Sharpness": sharpness,
    "Color": color,
    "Contrast": contrast,
    "Brightness": brightness,
    "Solarize": solarize,
}


def apply_color_op(op: OpSpec | str, param: float | None, image: np.ndarray) -> np.ndarray:
    op = get_op(op)
    if op.kind != COLOR:
        raise ContractError(f"{op.name} is not a color op")
    check_image(image)
    if op.name == "AutoContrast":
        return autocontrast(image)
    if op.name == "Equalize":
        return equalize(image)
    if param is None:
        raise ContractError(f"{op.name} requires a parameter")
    return _COLOR_KERNELS[op.name](image, float(param))


# ---------------------------------------------------------------------------
# geometric kernels

InverseMap = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def _inverse_map(name: str, param: float | None, h: int, w: int) -> InverseMap:
    cx = (w - 1) / 2
    cy = (h - 1) / 2
    if name == "Rotate":
        rad = math.radians(param)
        c, s = math.cos(rad), math.sin(rad)

        def rot(x, y):
            dx = x - cx
            dy = y - cy
            return cx + (c * dx - s * dy), cy + (s * dx + c * dy)

        return rot
    if name == "ShearX":
        return lambda x, y: (x - param * (y - cy), y)
    if name == "ShearY":
        return lambda x, y: (x, y - param * (x - cx))
    if name == "TranslateX":
        shift = param * w
        return lambda x, y: (x - shift, y)
    if name == "TranslateY":
        shift = param * h
        return lambda x, y: (x, y - shift)
    if name == "Scale":
        if param <= 0:
            raise ContractError(f"scale factor must be positive, got {param}")
        return lambda x, y: (cx + (x - cx) / param, cy + (y - cy) / param)
    if name == "FlipX":
        return lambda x, y: ((w - 1) - x, y)
    raise ContractError(f"{name} is not a geometric op")


def _sample_bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w, nc = img.shape
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    src = img.astype(np.float64)
    acc = np.zeros(sx.shape + (nc,), dtype=np.float64)
    corners = (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    )
    for ox, oy, wt in corners:
        xi = x0 + ox
        yi = y0 + oy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros_like(acc)
        vals[valid] = src[yi[valid], xi[valid]]
        acc = acc + wt[..., None] * vals
    return _round_clip(acc)


def _sample_nearest(mask: np.ndarray, sx: np.ndarray, sy: np.ndarray, fill: int) -> np.ndarray:
    h, w = mask.shape
    xi = np.floor(sx + 0.5).astype(np.int64)
    yi = np.floor(sy + 0.5).astype(np.int64)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.full(sx.shape, fill, dtype=np.uint8)
    out[valid] = mask[yi[valid], xi[valid]]
    return out


def apply_geometric_op(
    op: OpSpec | str,
    param: float | None,
    image: np.ndarray,
    mask: np.ndarray,
    ignore_index: int = IGNORE_INDEX,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one affine op jointly: bilinear (fill 0) on the image, nearest
    (fill ``ignore_index``) on the mask. Output size equals input size."""
    op = get_op(op)
    if op.kind != GEOMETRIC:
        raise ContractError(f"{op.name} is not a geometric op")
    check_pair(image, mask)
    if param is None and not op.parameterless:
        raise ContractError(f"{op.name} requires a parameter")
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx, sy = _inverse_map(op.name, param, h, w)(xx, yy)
    sx = np.broadcast_to(sx, (h, w))
    sy = np.broadcast_to(sy, (h, w))
    out_img = _restore(_sample_bilinear(_channels(image), sx, sy), image)
    out_mask = _sample_nearest(mask, sx, sy, ignore_index)
    return out_img, out_mask


def apply_op(
    op: OpSpec | str,
    param: float | None,
    image: np.ndarray,
    mask: np.ndarray,
    ignore_index: int = IGNORE_INDEX,
) -> tuple[np.ndarray, np.ndarray]:
    op = get_op(op)
    if op.kind == IDENTITY:
        return image.copy(), mask.copy()
    if op.kind == COLOR:
        return apply_color_op(op, param, image), mask.copy()
    return apply_geometric_op(op, param, image, mask, ignore_index)


# ---------------------------------------------------------------------------
# plans


@dataclass(frozen=True)
class Step:
    """One resolved plan step.

    ``value`` carries an explicit parameter (DefaultAugment's continuous
    angle and scale) and takes precedence over ``magnitude``.
    """

    op: str
    magnitude: int | None = None
    sign: int = 1
    value: float | None = None

    def param(self) -> float | None:
        if self.value is not None:
            return self.value
        spec = get_op(self.op)
        if spec.parameterless:
            return None
        if self.magnitude is None:
            raise ContractError(f"step {self.op} has neither magnitude nor value")
        return magnitude_to_param(spec, self.magnitude, self.sign)

    def to_dict(self) -> dict:
        d: dict = {"op": self.op, "sign": self.sign}
        if self.magnitude is not None:
            d["magnitude"] = self.magnitude
        if self.value is not None:
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        get_op(d["op"])
        m = d.get("magnitude")
        if m is not None:
            check_magnitude(m)
        return cls(d["op"], m, int(d.get("sign", 1)), d.get("value"))


@dataclass(frozen=True)
class AugPlan:
    augment: bool
    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        if not self.augment and self.steps:
            raise ContractError("a do-not-augment plan cannot carry steps")

    def to_dict(self) -> dict:
        return {"augment": self.augment, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "AugPlan":
        return cls(bool(d["augment"]), tuple(Step.from_dict(s) for s in d.get("steps", ())))


NO_AUGMENT = AugPlan(False)


def apply_plan(
    plan: AugPlan,
    image: np.ndarray,
    mask: np.ndarray,
    ignore_index: int = IGNORE_INDEX,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``plan`` step by step; color steps touch the image only."""
    check_pair(image, mask)
    if not plan.augment:
        return image, mask
    for step in plan.steps:
        image, mask = apply_op(step.op, step.param(), image, mask, ignore_index)
    return image, mask
