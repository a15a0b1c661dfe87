#!/usr/bin/env python3
"""Convert the digits bundled in the `mnist` npm package into IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_npm_to_idx.py package/src/digits data/mnist10k

The package stores each digit class as a JSON list of 784-pixel images with
values byte/255 rounded to three decimals; rounding v*255 recovers the byte.
Images are emitted round-robin over classes so every prefix is near balanced.
"""
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    per_class = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        if len(flat) % 784:
            raise SystemExit(f"{digit}.json: length {len(flat)} not a multiple of 784")
        imgs = [bytes(round(v * 255) for v in flat[i:i + 784]) for i in range(0, len(flat), 784)]
        per_class.append(imgs)

    images, labels = [], []
    cursor = [0] * 10
    while any(cursor[d] < len(per_class[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_class[d]):
                images.append(per_class[d][cursor[d]])
                labels.append(d)
                cursor[d] += 1

    dst.mkdir(parents=True, exist_ok=True)
    with open(dst / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(dst / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images to {dst}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    main(Path(sys.argv[1]), Path(sys.argv[2]))
