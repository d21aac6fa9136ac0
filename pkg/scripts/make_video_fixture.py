"""Render the small grayscale frame stack used by the video acceptance test.

A stand-in for a short sports clip: a lit court gradient, a static textured
crowd band, and a few blobs moving across frames.  Frames are quantised to
8 bits like real video.

    python scripts/make_video_fixture.py tests/fixtures/frames_36x64x10.t3b
"""

import argparse

import numpy as np

from tubalnet.dataio import frames_to_tensor, write_tensor


def render(height=36, width=64, n_frames=10, seed=2021):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    court = 0.35 + 0.3 * (yy / height) + 0.05 * np.cos(2 * np.pi * xx / width)
    crowd = np.zeros_like(court)
    band = yy < height // 4
    crowd[band] = 0.15 * rng.random(band.sum())
    crowd = 0.5 * crowd + 0.5 * np.roll(crowd, 1, axis=1)

    blobs = [
        # (y0, x0, dy, dx, radius, brightness)
        (22.0, 8.0, -0.3, 2.8, 3.5, 0.35),
        (26.0, 50.0, 0.2, -2.0, 4.0, -0.25),
        (14.0, 30.0, 1.1, 1.3, 1.8, 0.45),
    ]
    frames = []
    for f in range(n_frames):
        img = court + crowd
        for y0, x0, dy, dx, rad, amp in blobs:
            cy, cx = y0 + dy * f, x0 + dx * f
            img = img + amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad**2))
        frames.append(np.clip(np.round(img * 255), 0, 255).astype(np.uint8))
    return frames_to_tensor(frames)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out")
    parser.add_argument("--seed", type=int, default=2021)
    args = parser.parse_args()
    write_tensor(render(seed=args.seed), args.out)


if __name__ == "__main__":
    main()
