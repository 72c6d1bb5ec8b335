"""Brute-force reference implementations used as test oracles.

Everything here works pixel by pixel on nested Python lists, with exact
rational arithmetic wherever the operation is integer-valued. Nothing is
imported from the package under test.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

HALF = Fraction(1, 2)


def to_lists(image):
    """(H, W[, C]) array -> rows of pixels, each pixel a list of channels."""
    arr = image.tolist()
    if image.ndim == 2:
        return [[[v] for v in row] for row in arr]
    return arr


def from_lists(rows, like):
    import numpy as np

    out = np.array(rows, dtype=np.uint8)
    return out[:, :, 0] if like.ndim == 2 else out


def clip_round(x: float) -> int:
    return min(255, max(0, math.floor(x + 0.5)))


def luma(px) -> int:
    if len(px) == 1:
        return px[0]
    r, g, b = px
    return (r * 19595 + g * 38470 + b * 7471 + 0x8000) >> 16


def blend_px(deg, px, factor):
    return [clip_round(d + factor * (v - d)) for d, v in zip(deg, px)]


def brightness(rows, factor):
    return [[blend_px([0] * len(px), px, factor) for px in row] for row in rows]


def contrast(rows, factor):
    values = [luma(px) for row in rows for px in row]
    mean = math.floor(Fraction(sum(values), len(values)) + HALF)
    return [[blend_px([mean] * len(px), px, factor) for px in row] for row in rows]


def color(rows, factor):
    if len(rows[0][0]) == 1:
        return [[list(px) for px in row] for row in rows]
    return [[blend_px([luma(px)] * 3, px, factor) for px in row] for row in rows]


def sharpness(rows, factor):
    h, w = len(rows), len(rows[0])
    out = []
    for y in range(h):
        new_row = []
        for x in range(w):
            px = rows[y][x]
            if y in (0, h - 1) or x in (0, w - 1):
                deg = list(px)
            else:
                deg = []
                for c in range(len(px)):
                    acc = 0
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            acc += rows[y + dy][x + dx][c] * (5 if dx == dy == 0 else 1)
                    deg.append(math.floor(Fraction(acc, 13) + HALF))
            new_row.append(blend_px(deg, px, factor))
        out.append(new_row)
    return out


def solarize(rows, threshold):
    return [[[255 - v if v >= threshold else v for v in px] for px in row] for row in rows]


def autocontrast(rows):
    nc = len(rows[0][0])
    out = [[list(px) for px in row] for row in rows]
    for c in range(nc):
        vals = [px[c] for row in rows for px in row]
        lo, hi = min(vals), max(vals)
        if lo == hi:
            continue
        for row in out:
            for px in row:
                px[c] = min(255, math.floor(Fraction((px[c] - lo) * 255, hi - lo) + HALF))
    return out


def equalize(rows):
    nc = len(rows[0][0])
    out = [[list(px) for px in row] for row in rows]
    for c in range(nc):
        hist = [0] * 256
        for row in rows:
            for px in row:
                hist[px[c]] += 1
        used = [h for h in hist if h]
        step = (sum(used) - used[-1]) // 255
        if not step:
            continue
        lut = []
        n = step // 2
        for i in range(256):
            lut.append(min(255, n // step))
            n += hist[i]
        for row in out:
            for px in row:
                px[c] = lut[px[c]]
    return out


# --- geometric -------------------------------------------------------------


def source_coord(name, param, x, y, h, w):
    cx = (w - 1) / 2
    cy = (h - 1) / 2
    if name == "Rotate":
        rad = math.radians(param)
        c, s = math.cos(rad), math.sin(rad)
        dx, dy = x - cx, y - cy
        return cx + (c * dx - s * dy), cy + (s * dx + c * dy)
    if name == "ShearX":
        return x - param * (y - cy), y
    if name == "ShearY":
        return x, y - param * (x - cx)
    if name == "TranslateX":
        return x - param * w, y
    if name == "TranslateY":
        return x, y - param * h
    if name == "Scale":
        return cx + (x - cx) / param, cy + (y - cy) / param
    if name == "FlipX":
        return (w - 1) - x, y
    raise KeyError(name)


def geometric(name, param, rows, mask_rows, ignore):
    h, w = len(rows), len(rows[0])
    nc = len(rows[0][0])
    out, out_mask = [], []
    for y in range(h):
        row, mrow = [], []
        for x in range(w):
            sx, sy = source_coord(name, param, float(x), float(y), h, w)
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            px = []
            for c in range(nc):
                acc = 0.0
                for ox, oy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                                   (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
                    xi, yi = x0 + ox, y0 + oy
                    v = rows[yi][xi][c] if 0 <= xi < w and 0 <= yi < h else 0
                    acc = acc + wt * v
                px.append(clip_round(acc))
            row.append(px)
            xn, yn = math.floor(sx + 0.5), math.floor(sy + 0.5)
            mrow.append(mask_rows[yn][xn] if 0 <= xn < w and 0 <= yn < h else ignore)
        out.append(row)
        out_mask.append(mrow)
    return out, out_mask


COLOR_ORACLES = {
    "Brightness": brightness,
    "Contrast": contrast,
    "Color": color,
    "Sharpness": sharpness,
    "Solarize": solarize,
}


# --- metrics ---------------------------------------------------------------


def miou_sets(preds, gts, k, ignore):
    """IoU per class from explicit sets of (image, row, col) positions."""
    pred_sets = {c: set() for c in range(k)}
    gt_sets = {c: set() for c in range(k)}
    for i, (p, g) in enumerate(zip(preds, gts)):
        for r, (prow, grow) in enumerate(zip(p.tolist(), g.tolist())):
            for col, (pv, gv) in enumerate(zip(prow, grow)):
                if gv == ignore:
                    continue
                pos = (i, r, col)
                pred_sets[pv].add(pos)
                gt_sets[gv].add(pos)
    ious = []
    for c in range(k):
        inter = pred_sets[c] & gt_sets[c]
        union = pred_sets[c] | gt_sets[c]
        if union:
            ious.append(Fraction(len(inter), len(union)))
    return sum(ious) / len(ious)


# --- sampling --------------------------------------------------------------


def ordered_pair_distribution(weights: dict) -> dict:
    """Exact probability of each ordered pair under successive weighted draws
    without replacement."""
    w = {k: Fraction(v).limit_denominator(10**9) for k, v in weights.items() if v > 0}
    total = sum(w.values())
    dist = {}
    for a, b in itertools.permutations(w, 2):
        dist[(a, b)] = (w[a] / total) * (w[b] / (total - w[a]))
    return dist
