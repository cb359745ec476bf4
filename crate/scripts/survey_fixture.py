#!/usr/bin/env python3
"""Builds fixtures/survey/responses-385.jsonl from fixed rating histograms.
Each histogram is spread over respondents with a seeded shuffle."""

import json
import random

N = 385
BASE = {5: 150, 4: 150, 3: 60, 2: 20, 1: 5}       # sum 1575
HIGH = {5: 220, 4: 120, 3: 35, 2: 8, 1: 2}        # sum 1703


def shifted(base, delta):
    """Move |delta| respondents between ratings 4 and 5."""
    h = dict(base)
    h[5] += delta
    h[4] -= delta
    return h


ITEMS = [
    ("user-friendliness", shifted(BASE, 42)),        # 1617
    ("suggestion-accuracy", shifted(BASE, 15)),      # 1590
    ("recognition-speed", {5: 120, 4: 130, 3: 80, 2: 40, 1: 15}),  # 250 of 385 rate >= 4
    ("personalized-guidance", shifted(BASE, -20)),   # 1555
    ("privacy-trust", shifted(HIGH, 18)),            # 1721
    ("contentment", shifted(HIGH, 37)),              # 1740
    ("recommend-likelihood", shifted(HIGH, -17)),    # 1686
    ("nps", {5: 130, 4: 90, 3: 104, 2: 35, 1: 16, 0: 10}),
]


def main():
    columns = []
    for k, (item, hist) in enumerate(ITEMS):
        assert sum(hist.values()) == N, item
        ratings = [r for r, c in sorted(hist.items()) for _ in range(c)]
        random.Random(2024 + k).shuffle(ratings)
        columns.append((item, ratings))
    with open("fixtures/survey/responses-385.jsonl", "w") as f:
        for i in range(N):
            rid = f"r{i + 1:03d}"
            for item, ratings in columns:
                f.write(json.dumps({"respondent_id": rid, "item_id": item, "rating": ratings[i]}) + "\n")
    for item, ratings in columns:
        print(item, sum(ratings), sum(r >= 4 for r in ratings))


if __name__ == "__main__":
    main()
