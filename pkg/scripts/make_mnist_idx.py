"""Write the 5000-sample MNIST subset bundled with mlxtend as gzipped IDX files.

Usage: python scripts/make_mnist_idx.py [out_dir]

mlxtend is only needed here; the package reads the IDX files.
"""
import sys
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from biqc.data import write_idx


def main(out_dir: str = "data/mnist35") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, y = mnist_data()
    images = x.reshape(-1, 28, 28).astype(np.uint8)
    write_idx(out / "mnist5k-images-idx3-ubyte.gz", images)
    write_idx(out / "mnist5k-labels-idx1-ubyte.gz", y.astype(np.uint8))
    print(f"wrote {images.shape[0]} images to {out}")


if __name__ == "__main__":
    main(*sys.argv[1:])
