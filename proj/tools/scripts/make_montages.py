#!/usr/bin/env python3
# Copyright 2026 The neurodiff Authors
# SPDX-License-Identifier: Apache-2.0
"""Writes the planar montages shipped in data/montages.

EEG: 63 positions of the extended 10-10 system on a unit sphere, projected
azimuthally equidistant from the vertex and scaled into the unit disk.
MEG: 271 sensors on a sunflower (Fermat spiral) layout.
"""

import argparse
import math
import pathlib

EEG_63 = [
    "Fp1", "Fz", "F3", "F7", "FT9", "FC5", "FC1", "C3", "T7", "TP9", "CP5", "CP1",
    "Pz", "P3", "P7", "O1", "Oz", "O2", "P4", "P8", "TP10", "CP6", "CP2", "Cz",
    "C4", "T8", "FT10", "FC6", "FC2", "F4", "F8", "Fp2", "AF7", "AF3", "AFz", "F1",
    "F5", "FT7", "FC3", "C1", "C5", "TP7", "CP3", "P1", "P5", "PO7", "PO3", "POz",
    "PO4", "PO8", "P6", "P2", "CPz", "CP4", "TP8", "C6", "C2", "FC4", "FT8", "F6",
    "AF8", "AF4", "F2",
]

# Polar angle of each row's midline electrode from the vertex, anterior
# positive, in degrees.
ROWS = {"AF": 54, "F": 36, "FC": 18, "C": 0, "CP": -18, "P": -36, "PO": -54}
# Azimuth of the left-hemisphere outer ring electrodes, measured from the
# nose; the ring sits 72 degrees from the vertex.
RING = {"Fp1": 18, "AF7": 36, "F7": 54, "FT7": 72, "T7": 90, "TP7": 108,
        "P7": 126, "PO7": 144, "O1": 162}
INFERIOR = {"FT9": 72, "TP9": 108}
OUTER = {"AF": "AF7", "F": "F7", "FC": "FT7", "C": "T7", "CP": "TP7", "P": "P7",
         "PO": "PO7"}
MAX_POLAR = 100.0


def unit(polar, azimuth):
    p, a = math.radians(polar), math.radians(azimuth)
    return (-math.sin(p) * math.sin(a), math.sin(p) * math.cos(a), math.cos(p))


def mirror(name):
    head = name.rstrip("0123456789")
    return head + str(int(name[len(head):]) + 1)


def sphere(name):
    for table, polar in ((RING, 72.0), (INFERIOR, 90.0)):
        for left, az in table.items():
            if name == left:
                return unit(polar, az)
            if name == mirror(left):
                return unit(polar, -az)
    if name in ("Fpz", "Oz"):
        return unit(72.0, 0.0 if name == "Fpz" else 180.0)
    head = name.rstrip("0123456789z")
    tail = name[len(head):]
    row = ROWS[head]
    mid = unit(abs(row), 0.0 if row >= 0 else 180.0)
    if tail == "z":
        return mid
    n = int(tail)
    outer = sphere(OUTER[head] if n % 2 else mirror(OUTER[head]))
    f = ((n + 1) // 2) / 4.0
    # Great-circle interpolation from the midline to the outer ring.
    omega = math.acos(max(-1.0, min(1.0, sum(a * b for a, b in zip(mid, outer)))))
    wa = math.sin((1 - f) * omega) / math.sin(omega)
    wb = math.sin(f * omega) / math.sin(omega)
    return tuple(wa * a + wb * b for a, b in zip(mid, outer))


def eeg_position(name):
    x, y, z = sphere(name)
    polar = math.degrees(math.acos(max(-1.0, min(1.0, z))))
    r = polar / MAX_POLAR
    azimuth = math.atan2(y, x)
    return r * math.cos(azimuth), r * math.sin(azimuth)


def meg_positions(n=271, radius=0.95):
    golden = math.pi * (3.0 - math.sqrt(5.0))
    for i in range(n):
        r = radius * math.sqrt((i + 0.5) / n)
        a = i * golden
        yield f"MEG{i + 1:03d}", r * math.cos(a), r * math.sin(a)


def write(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write("# Copyright 2026 The neurodiff Authors\n# SPDX-License-Identifier: Apache-2.0\n")
        for name, x, y in rows:
            f.write(f"{name},{round(x, 6) + 0.0:.6f},{round(y, 6) + 0.0:.6f}\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/montages"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    write(args.out / "eeg63.csv", [(n, *eeg_position(n)) for n in EEG_63])
    write(args.out / "meg271.csv", list(meg_positions()))


if __name__ == "__main__":
    main()
