#!/usr/bin/env python3
"""Writes tests/data/oracles.json from implementations independent of the C++ code.

Geometry comes from shapely polygons, edit distance from a full-matrix
Wagner-Fischer table, scalar cases from closed forms.
"""
import json
import math
import pathlib
import random

from shapely.geometry import box as sbox


def rand_box(rng):
    x = sorted(rng.random() for _ in range(2))
    y = sorted(rng.random() for _ in range(2))
    return [x[0], y[0], x[1], y[1]]


def geometry_case(a, b):
    pa, pb = sbox(*a), sbox(*b)
    inter = pa.intersection(pb).area
    union = pa.union(pb).area
    hull = sbox(min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])).area
    iou = inter / union if union > 0 else 0.0
    return {
        "a": a,
        "b": b,
        "iou": iou,
        "giou": iou - (hull - union) / hull if hull > 0 else 0.0,
        "iou_hat": inter / pb.area if pb.area > 0 else 0.0,
    }


def wagner_fischer(s, t):
    d = [[0] * (len(t) + 1) for _ in range(len(s) + 1)]
    for i in range(len(s) + 1):
        d[i][0] = i
    for j in range(len(t) + 1):
        d[0][j] = j
    for i in range(1, len(s) + 1):
        for j in range(1, len(t) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (s[i - 1] != t[j - 1]))
    return d[len(s)][len(t)]


def main():
    rng = random.Random(20240611)
    geometry = [geometry_case(rand_box(rng), rand_box(rng)) for _ in range(200)]
    geometry.append(geometry_case([0.0, 0.0, 0.5, 0.5], [0.4, 0.4, 0.6, 0.6]))

    alphabet = "abcde"
    strings = []
    for _ in range(200):
        s = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
        t = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
        strings.append({"a": s, "b": t, "distance": wagner_fischer(s, t)})
    strings.append({"a": "kitten", "b": "sitting", "distance": wagner_fischer("kitten", "sitting")})

    pred, gold = "states of america", "united states of america"
    scalars = {
        "iou_hat_quarter": geometry[-1]["iou_hat"],
        "iou_offset_squares": geometry_case([0.0, 0.0, 0.2, 0.2], [0.1, 0.1, 0.3, 0.3])["iou"],
        "giou_far_corners": geometry_case([0.0, 0.0, 0.1, 0.1], [0.9, 0.9, 1.0, 1.0])["giou"],
        "sigmoid_4": 1.0 / (1.0 + math.exp(-4.0)),
        "bnll_half": -math.log(0.5),
        "anls_states_of_america": 1.0 - wagner_fischer(pred, gold) / max(len(pred), len(gold)),
        "vqa_one_of_ten": 1.0 / 3.0,
    }
    out = {"geometry": geometry, "levenshtein": strings, "scalars": scalars}
    path = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data" / "oracles.json"
    path.write_text(json.dumps(out, indent=1) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
