#!/usr/bin/env python3
"""Regenerate the tiny IDX pair shipped under tests/fixtures/.

The fixture is 100 28x28 images with labels cycling 0..9. Each image
is a label-keyed low-frequency bump plus seeded noise, so the files
exercise the full byte range without depending on any real dataset.
Output is deterministic; rerunning must reproduce the committed bytes.
"""

import argparse
import os

import numpy as np

from fedsmooth.data import write_idx_images, write_idx_labels


def fixture_arrays(count: int, side: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    labels = (np.arange(count) % 10).astype(np.uint8)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    images = np.empty((count, side, side), dtype=np.uint8)
    for i, lab in enumerate(labels):
        # bump centre sweeps across the image with the label
        cy = side * (0.2 + 0.06 * lab)
        cx = side * (0.8 - 0.06 * lab)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * (side / 6.0) ** 2))
        noisy = 220.0 * bump + rng.uniform(0.0, 35.0, size=(side, side))
        images[i] = np.clip(noisy, 0.0, 255.0).astype(np.uint8)
    return images, labels


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="tests/fixtures")
    parser.add_argument("--count", type=int, default=100)
    parser.add_argument("--side", type=int, default=28)
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()

    images, labels = fixture_arrays(args.count, args.side, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    img_path = os.path.join(args.out_dir, "fixture-images-idx3-ubyte")
    lab_path = os.path.join(args.out_dir, "fixture-labels-idx1-ubyte")
    write_idx_images(img_path, images)
    write_idx_labels(lab_path, labels)
    print(f"wrote {img_path} ({os.path.getsize(img_path)} bytes)")
    print(f"wrote {lab_path} ({os.path.getsize(lab_path)} bytes)")


if __name__ == "__main__":
    main()
