"""Build MNIST IDX training files from the digit JSON shipped in the npm `mnist` package.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python tools/mnist_from_npm.py package/src/digits data/mnist --count 2000

Each digits/<d>.json holds {"data": [...]}: consecutive 784-value images scaled
to [0, 1]. Samples are interleaved so sample k has label k % 10.
"""

import argparse
import json
import struct
from pathlib import Path


def load_digits(src: Path):
    digits = []
    for d in range(10):
        flat = json.loads((src / f"{d}.json").read_text())["data"]
        digits.append([flat[i:i + 784] for i in range(0, len(flat), 784)])
    return digits


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("src", type=Path, help="directory holding 0.json .. 9.json")
    ap.add_argument("out", type=Path)
    ap.add_argument("--count", type=int, default=2000)
    args = ap.parse_args()

    digits = load_digits(args.src)
    per_class = args.count // 10
    if any(len(d) < per_class for d in digits):
        raise SystemExit(f"not enough images for {per_class} per class")

    images, labels = bytearray(), bytearray()
    for k in range(per_class * 10):
        label, idx = k % 10, k // 10
        images.extend(min(255, max(0, round(v * 255))) for v in digits[label][idx])
        labels.append(label)

    n = len(labels)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "train-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 2051, n, 28, 28) + images)
    (args.out / "train-labels-idx1-ubyte").write_bytes(struct.pack(">II", 2049, n) + labels)
    print(f"wrote {n} samples to {args.out}")


if __name__ == "__main__":
    main()
