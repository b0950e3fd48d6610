#!/usr/bin/env python3
"""Regenerates the fixture maps under configs/.

The output format matches the C++ map writer byte for byte, so a load/save cycle
through the library reproduces these files exactly.
"""
import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "configs"


def fmt_num(v):
    return json.dumps(float(v))


def dump(cell_size, start, terminal, heights, devices):
    lines = ["{"]
    lines.append(f'  "cell_size_m": {fmt_num(cell_size)},')
    lines.append(f'  "start_cell": [{start[0]},{start[1]}],')
    lines.append(f'  "terminal_cell": [{terminal[0]},{terminal[1]}],')
    lines.append('  "heights_m": [')
    for iy, row in enumerate(heights):
        sep = "," if iy + 1 < len(heights) else ""
        lines.append("    [" + ",".join(fmt_num(h) for h in row) + "]" + sep)
    lines.append("  ],")
    lines.append('  "devices": [')
    for i, d in enumerate(devices):
        sep = "," if i + 1 < len(devices) else ""
        anchor = "true" if d["anchor"] else "false"
        lines.append(
            f'    {{"anchor":{anchor},"cell":[{d["cell"][0]},{d["cell"][1]}],'
            f'"data_init":{fmt_num(d["data_init"])},"id":{d["id"]}}}' + sep)
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def block_city(width, height, block, street, lo, hi, rng):
    """Rectangular blocks of `block` cells separated by `street`-wide open streets."""
    heights = [[0.0] * width for _ in range(height)]
    period = block + street
    block_heights = {}
    for iy in range(height):
        for ix in range(width):
            if ix % period < block and iy % period < block:
                key = (ix // period, iy // period)
                if key not in block_heights:
                    block_heights[key] = float(rng.randint(lo, hi))
                heights[iy][ix] = block_heights[key]
    return heights


def rbm():
    rng = random.Random(2023)
    w, h = 60, 80
    heights = block_city(w, h, block=6, street=2, lo=10, hi=50, rng=rng)
    center = (30, 40)
    heights[center[1]][center[0]] = 0.0
    # Street cells (x % 8 in {6, 7} or y % 8 in {6, 7}) within reach of the base.
    cells = [(22, 30), (38, 30), (14, 47), (46, 38), (30, 22),
             (31, 54), (22, 46), (39, 62), (17, 38), (46, 51)]
    devices = []
    for i, c in enumerate(cells):
        assert heights[c[1]][c[0]] == 0.0, c
        devices.append({"id": i, "cell": c, "data_init": 16000, "anchor": i < 3})
    return dump(10.0, center, center, heights, devices)


def rdm():
    rng = random.Random(2024)
    w, h = 25, 30
    heights = block_city(w, h, block=2, street=1, lo=10, hi=50, rng=rng)
    start, terminal = (0, 0), (24, 29)
    for c in (start, terminal):
        heights[c[1]][c[0]] = 0.0
    cells = [(2, 5), (8, 2), (5, 11), (11, 8), (14, 14),
             (8, 17), (17, 11), (20, 23), (14, 26), (23, 17)]
    devices = []
    for i, c in enumerate(cells):
        assert heights[c[1]][c[0]] == 0.0, c
        devices.append({"id": i, "cell": c, "data_init": 20000, "anchor": i < 3})
    return dump(40.0, start, terminal, heights, devices)


def desk():
    """20x20 cells: a roof of 40-50 m blocks with two open plazas holding two devices each."""
    rng = random.Random(7)
    w, h = 20, 20
    heights = [[0.0] * w for _ in range(h)]
    for by in range(0, h, 2):
        for bx in range(0, w, 2):
            v = float(rng.randint(40, 50))
            for iy in range(by, by + 2):
                for ix in range(bx, bx + 2):
                    heights[iy][ix] = v
    plazas = [(3, 13), (16, 6)]
    for cx, cy in plazas:
        for iy in range(cy - 2, cy + 3):
            for ix in range(cx - 2, cx + 3):
                heights[iy][ix] = 0.0
    base = (10, 10)
    heights[base[1]][base[0]] = 0.0
    cells = [(2, 13), (4, 13), (16, 5), (16, 7)]
    devices = [{"id": i, "cell": c, "data_init": 30, "anchor": i % 2 == 0}
               for i, c in enumerate(cells)]
    return dump(10.0, base, base, heights, devices)


def main():
    OUT.mkdir(exist_ok=True)
    (OUT / "rbm_map.json").write_text(rbm())
    (OUT / "rdm_map.json").write_text(rdm())
    (OUT / "desk_map.json").write_text(desk())


if __name__ == "__main__":
    main()
