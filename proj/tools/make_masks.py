"""Writes the RGBA overlay masks in assets/masks (alpha is the blend weight)."""
import pathlib

import numpy as np
from PIL import Image

SIZE = 64
OUT = pathlib.Path(__file__).resolve().parent.parent / "assets" / "masks"


def smooth_noise(rng, cells):
    coarse = rng.random((cells, cells))
    img = Image.fromarray((coarse * 255).astype(np.uint8)).resize((SIZE, SIZE), Image.BICUBIC)
    return np.asarray(img, dtype=np.float64) / 255.0


def rgba(rgb, alpha):
    a = np.clip(alpha, 0.0, 1.0)
    out = np.zeros((SIZE, SIZE, 4), dtype=np.uint8)
    out[..., :3] = np.asarray(rgb, dtype=np.uint8)
    out[..., 3] = np.round(a * 255).astype(np.uint8)
    return out


def fog(rng):
    return rgba((235, 235, 240), 0.35 + 0.5 * smooth_noise(rng, 6))


def glare(rng):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    cy, cx = rng.uniform(0.2, 0.45, 2) * SIZE
    r2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (0.3 * SIZE) ** 2
    return rgba((255, 250, 220), np.exp(-r2))


def rain(rng):
    alpha = np.zeros((SIZE, SIZE))
    for _ in range(40):
        x, y, length = rng.integers(0, SIZE), rng.integers(-8, SIZE), rng.integers(6, 14)
        for k in range(length):
            yy, xx = y + k, x + k // 3
            if 0 <= yy < SIZE and 0 <= xx < SIZE:
                alpha[yy, xx] = 0.8
    return rgba((200, 210, 230), alpha)


def drops(rng):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    alpha = np.zeros((SIZE, SIZE))
    for _ in range(12):
        cy, cx, r = rng.uniform(0, SIZE), rng.uniform(0, SIZE), rng.uniform(2, 6)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        alpha = np.maximum(alpha, np.clip(1.0 - d / r, 0, 1) * 0.9)
    return rgba((180, 190, 200), alpha)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for i, make in enumerate((fog, glare, rain, drops)):
        rng = np.random.default_rng(1000 + i)
        Image.fromarray(make(rng), "RGBA").save(OUT / f"{make.__name__}.png", optimize=False)


if __name__ == "__main__":
    main()
