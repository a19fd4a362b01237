"""Regenerate the bundled 8x8 digit IDX files from scikit-learn's copy of the
UCI optical-digits test set. Pixel values 0..16 are rescaled to 0..255."""
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

from indrnn.numerics import seed_rng
from indrnn.tasks import make_permutation, write_idx

OUT = Path(__file__).resolve().parents[1] / "src" / "indrnn" / "data"
N_TEST = 360


def main():
    digits = load_digits()
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    order = make_permutation(seed_rng(20180614), len(labels))
    test, train = order[:N_TEST], order[N_TEST:]
    for split, idx in (("train", train), ("test", test)):
        write_idx(OUT / f"digits8-{split}-images.idx.gz", images[idx])
        write_idx(OUT / f"digits8-{split}-labels.idx.gz", labels[idx])
        print(split, len(idx))


if __name__ == "__main__":
    main()
