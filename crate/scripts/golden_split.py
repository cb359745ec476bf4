#!/usr/bin/env python3
"""Independent SplitMix64 split oracle used to produce the committed golden
split files. Usage: golden_split.py <n-or-coco-json> <seed> <out-dir>"""

import json
import math
import os
import sys

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next(self):
        self.state = (self.state + GAMMA) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def below(self, bound):
        threshold = (1 << 64) % bound
        while True:
            r = self.next()
            if r >= threshold:
                return r % bound


def split(ids, seed, fractions=(0.70, 0.15, 0.15)):
    order = list(ids)
    rng = SplitMix64(seed)
    for i in range(len(order) - 1, 0, -1):
        j = rng.below(i + 1)
        order[i], order[j] = order[j], order[i]
    n = len(order)
    val = min(math.floor(fractions[1] * n + 1e-9), n)
    test = min(math.floor(fractions[2] * n + 1e-9), n - val)
    train = n - val - test
    return order[:train], order[train:train + val], order[train + val:]


def main():
    source, seed, out = sys.argv[1], int(sys.argv[2]), sys.argv[3]
    if source.isdigit():
        ids = range(1, int(source) + 1)
    else:
        with open(source) as f:
            ids = [img["id"] for img in json.load(f)["images"]]
    os.makedirs(out, exist_ok=True)
    for name, bucket in zip(("train", "val", "test"), split(ids, seed)):
        with open(os.path.join(out, f"{name}.txt"), "w") as f:
            f.writelines(f"{i}\n" for i in bucket)
        print(name, len(bucket))


if __name__ == "__main__":
    main()
