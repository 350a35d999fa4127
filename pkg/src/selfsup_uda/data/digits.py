"""Procedural handwritten-style digits.

Each digit class is a set of strokes in the unit square. Every sample jitters
the control points, applies a random affine map and stroke width, draws at 4x
resolution and downsamples. Output is deterministic for a given seed.
"""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .sets import LabeledSet


def _arc(cx, cy, rx, ry, start, stop, n=14):
    t = np.radians(np.linspace(start, stop, n))
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _line(*pts):
    return np.asarray(pts, dtype=float)


# angles in degrees, y axis pointing down (so 90 is the bottom of a circle)
STROKES = {
    0: [_arc(0.5, 0.5, 0.27, 0.38, 0, 360, 24)],
    1: [_line((0.36, 0.25), (0.53, 0.12), (0.53, 0.88))],
    2: [np.vstack([_arc(0.5, 0.33, 0.25, 0.21, 200, 380), _line((0.72, 0.42), (0.25, 0.87), (0.78, 0.87))])],
    3: [_arc(0.47, 0.31, 0.24, 0.19, 210, 450), _arc(0.47, 0.68, 0.27, 0.2, 270, 500)],
    4: [_line((0.66, 0.88), (0.66, 0.12), (0.2, 0.64), (0.82, 0.64))],
    5: [np.vstack([_line((0.74, 0.13), (0.33, 0.13), (0.3, 0.47)),
                   _arc(0.49, 0.65, 0.26, 0.23, 230, 500)])],
    6: [np.vstack([_arc(0.62, 0.48, 0.32, 0.36, 240, 180, 8), _arc(0.5, 0.66, 0.23, 0.21, 180, 540)])],
    7: [_line((0.22, 0.13), (0.78, 0.13), (0.42, 0.88))],
    8: [_arc(0.5, 0.3, 0.2, 0.18, 0, 360, 20), _arc(0.5, 0.68, 0.25, 0.2, 0, 360, 20)],
    9: [_arc(0.5, 0.34, 0.23, 0.21, 0, 360, 20), _line((0.73, 0.36), (0.66, 0.88))],
}


def render_digit(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    scale_up = 4
    canvas = size * scale_up
    angle = np.radians(rng.uniform(-12, 12))
    sx, sy = rng.uniform(0.75, 1.05, size=2)
    shear = rng.uniform(-0.25, 0.25)
    tx, ty = rng.uniform(-0.07, 0.07, size=2)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    affine = rot @ np.array([[1.0, shear], [0.0, 1.0]]) @ np.diag([sx, sy])
    width = max(1, int(round(rng.uniform(0.07, 0.13) * canvas)))

    img = Image.new("L", (canvas, canvas), 0)
    draw = ImageDraw.Draw(img)
    for stroke in STROKES[label]:
        pts = stroke + rng.normal(0.0, 0.015, size=stroke.shape)
        pts = (pts - 0.5) @ affine.T + 0.5 + (tx, ty)
        xy = [tuple(p) for p in pts * canvas]
        draw.line(xy, fill=255, width=width, joint="curve")
        r = width / 2
        for x, y in (xy[0], xy[-1]):
            draw.ellipse((x - r, y - r, x + r, y + r), fill=255)
    small = img.resize((size, size), Image.BOX)
    return np.asarray(small, dtype=np.float32) / np.float32(255.0)


def render_digits(n: int, size: int = 16, seed: int = 0, num_classes: int = 10) -> LabeledSet:
    """``n`` digit images (N, 1, size, size) with near-balanced, shuffled labels."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    images = np.stack([render_digit(int(y), size, rng) for y in labels])[:, None]
    return LabeledSet(images, labels, num_classes)
