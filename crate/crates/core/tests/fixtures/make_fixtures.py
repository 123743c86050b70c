"""Writes the DHI projection fixtures and their expected images.

The expected images are computed here from first principles, without the
Rust code, so the Rust tests compare against an independent result.
"""
import math
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
WIDTH, HEIGHT = 16, 8
MAX_X, MAX_Z, MAX_R = 80.0, 6.0, 0.7

# lidar (X forward, Y left, Z up) -> pixel: u = 8 - 10 Y / X, v = 4 - 10 Z / X
CALIB = [[8.0, -10.0, 0.0, 0.0], [4.0, 0.0, -10.0, 0.0], [1.0, 0.0, 0.0, 0.0]]


def round_away(v):
    return math.floor(v + 0.5) if v >= 0 else -math.floor(-v + 0.5)


def encode(v, vmax):
    v = max(v, 0.0)
    return int(math.floor(255.0 * (1.0 - min(v / vmax, 1.0)) + 0.5))


def project(p):
    x, y, z, _ = (float(c) for c in p)
    h = [row[0] * x + row[1] * y + row[2] * z + row[3] for row in CALIB]
    if h[2] <= 0:
        return None
    u, v = round_away(h[0] / h[2]), round_away(h[1] / h[2])
    if 0 <= u < WIDTH and 0 <= v < HEIGHT:
        return u, v
    return None


def render(points):
    img = np.zeros((HEIGHT, WIDTH, 3), dtype=np.uint8)
    best = {}
    for p in points:
        pix = project(p)
        if pix is None:
            continue
        if pix not in best or float(p[0]) < float(best[pix][0]):
            best[pix] = p
    for (u, v), p in best.items():
        r = min(max(float(p[3]), 0.0), 1.0)
        img[v, u] = (encode(float(p[0]), MAX_X), encode(float(p[2]), MAX_Z), encode(r, MAX_R))
    return img


def write_case(name, points):
    pts = np.array(points, dtype=np.float32)
    (HERE / f"{name}.bin").write_bytes(b"".join(struct.pack("<4f", *row) for row in pts))
    img = render(pts)
    (HERE / f"{name}.ppm").write_bytes(f"P6\n{WIDTH} {HEIGHT}\n255\n".encode() + img.tobytes())


def main():
    calib = "3 4\n" + "\n".join(" ".join(repr(v) for v in row) for row in CALIB) + "\n"
    (HERE / "calib_3x4.txt").write_text(calib)
    write_case("single_point", [[20.0, -2.5, 2.1, 0.25]])
    write_case(
        "few_points",
        [
            [40.0, -5.0, 4.2, 0.5],  # same pixel as the next point, farther
            [20.0, -2.5, 2.1, 0.25],
            [10.0, 3.0, 0.0, 0.9],
            [-5.0, 1.0, 1.0, 0.3],  # behind the sensor
            [10.0, -10.0, 0.0, 0.3],  # right of the frame
            [100.0, 0.0, -1.0, 0.0],  # saturated depth, negative height
            [10.0, -0.5, -1.0, 1.5],  # u = 8.5 rounds away from zero; reflectivity clamped
        ],
    )


if __name__ == "__main__":
    main()
