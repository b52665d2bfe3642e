#!/usr/bin/env python3
"""Receptive-field and scale-coverage tables for the backbone presets.

Walks the layer list layer by layer (r <- r + (k - 1) * d * j, j <- j * s)
and derives the atrous-branch intervals of both Paired-ASPP wirings.
Used to produce and verify the golden tables the C++ code is tested against.
"""

import argparse
import itertools
import sys
from pathlib import Path

PRESETS = {
    "toy": {"blocks": (2, 2, 2, 2), "strides": (1, 2, 2, 1), "dilations": (1, 1, 2, 4)},
    "deep": {"blocks": (3, 4, 23, 3), "strides": (1, 2, 2, 1), "dilations": (1, 1, 2, 4)},
}

RATES = (18, 12, 6, 1)  # deep pair, middle pair, shallow pair, Y4


def layers(preset):
    """(name, kernel, stride, dilation, stage-end marker) for every layer on the main path."""
    yield ("stem.conv", 3, 2, 1, None)
    yield ("stem.pool", 3, 1, 1, None)
    for stage, (blocks, stride, dilation) in enumerate(
        zip(preset["blocks"], preset["strides"], preset["dilations"]), start=1
    ):
        for b in range(blocks):
            s = stride if b == 0 else 1
            # A strided convolution is never dilated.
            yield (f"stage{stage}.{b + 1}.conv1", 3, s, 1 if s > 1 else dilation, None)
            end = stage if b == blocks - 1 else None
            yield (f"stage{stage}.{b + 1}.conv2", 3, 1, dilation, end)


def stage_metadata(preset):
    jump, rf = 1, 1
    stages = []
    for _, k, s, d, end in layers(preset):
        rf += (k - 1) * d * jump
        jump *= s
        if end is not None:
            stages.append((jump, rf))
    return stages


def coverage(stages, combination):
    j4 = stages[3][0]
    r = [rf for _, rf in stages]
    deep, middle, shallow, single = RATES
    if combination == 2:
        deep, shallow = shallow, deep
    branches = [("V34", 2, deep), ("V24", 1, middle), ("V14", 0, shallow), ("Y4", 3, single)]
    out = []
    for name, i, rate in branches:
        reach = 2 * rate * j4
        if i == 3:
            # Single source: from the input scale up to the dilated output scale.
            out.append((name, rate, r[3], r[3] + reach))
        else:
            # Paired source: the dilated output scale of each of its two paths.
            out.append((name, rate, min(r[i], r[3]) + reach, max(r[i], r[3]) + reach))
    lo = min(b[2] for b in out)
    hi = max(b[3] for b in out)
    overlaps = sum(1 for a, b in itertools.combinations(out, 2) if a[2] <= b[3] and b[2] <= a[3])
    return out, lo, hi, overlaps


def render(name):
    stages = stage_metadata(PRESETS[name])
    lines = [f"stage {i} stride {j} rf {rf}" for i, (j, rf) in enumerate(stages, start=1)]
    for combination in (1, 2):
        branches, lo, hi, overlaps = coverage(stages, combination)
        for b in branches:
            lines.append(f"branch {combination} {b[0]} {b[1]} {b[2]} {b[3]}")
        lines.append(f"union {combination} {lo} {hi} {hi - lo} {overlaps}")
    return "\n".join(lines) + "\n"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--backbone", choices=sorted(PRESETS), default="toy")
    parser.add_argument("--check", type=Path, help="compare against this file instead of printing")
    args = parser.parse_args()
    text = render(args.backbone)
    if args.check is None:
        sys.stdout.write(text)
        return 0
    expected = args.check.read_text()
    if expected != text:
        sys.stderr.write(f"mismatch against {args.check}:\n--- expected\n{expected}--- computed\n{text}")
        return 1
    print(f"{args.check.name}: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
