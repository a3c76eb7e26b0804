#!/usr/bin/env python3
"""Regenerate the NIfTI-1 reader fixtures under crates/core/tests/fixtures/nifti.

Independent of the Rust code: headers are packed with `struct`, voxels are
written in Fortran order with numpy, and expected tensors are stored in C
order in expected.json.

    python3 tools/make_nifti_fixtures.py
"""

import json
import pathlib
import struct

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/nifti"


def header(endian, shape, datatype, bitpix, slope=0.0, inter=0.0, magic=b"n+1\0"):
    dim = [len(shape), *shape] + [1] * (7 - len(shape))
    h = bytearray(348)
    struct.pack_into(endian + "i", h, 0, 348)
    struct.pack_into(endian + "8h", h, 40, *dim)
    struct.pack_into(endian + "hh", h, 70, datatype, bitpix)
    struct.pack_into(endian + "8f", h, 76, 1.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(endian + "fff", h, 108, 352.0, slope, inter)
    h[344:348] = magic
    return bytes(h) + b"\0\0\0\0"


def write(name, hdr, voxels):
    (OUT / name).write_bytes(hdr + voxels)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    shape = (5, 4, 3)
    expected = {}

    f = (np.arange(np.prod(shape), dtype=np.float64).reshape(shape) * 0.375 - 7.0).astype(np.float32)
    f[1, 2, 0] = -0.0
    f[4, 3, 2] = 1.0e-3
    write("le_f32.nii", header("<", shape, 16, 32), f.astype("<f4").tobytes(order="F"))
    expected["le_f32"] = {"shape": list(shape), "data": [float(v) for v in f.astype(np.float64).ravel(order="C")]}

    rng = np.random.default_rng(20240611)
    raw = rng.integers(-3000, 3000, size=shape).astype(np.int16)
    slope, inter = 0.5, -3.0
    hdr_be = header(">", shape, 4, 16, slope, inter)
    write("be_i16_scaled.nii", hdr_be, raw.astype(">i2").tobytes(order="F"))
    write("le_i16_scaled.nii", header("<", shape, 4, 16, slope, inter), raw.astype("<i2").tobytes(order="F"))
    scaled = raw.astype(np.float64) * slope + inter
    expected["i16_scaled"] = {"shape": list(shape), "data": [float(v) for v in scaled.ravel(order="C")]}

    full = header("<", shape, 16, 32) + f.astype("<f4").tobytes(order="F")
    (OUT / "truncated.nii").write_bytes(full[: len(full) - 10])
    expected["truncated"] = {"needed": len(full), "found": len(full) - 10}

    write("bad_magic.nii", header("<", shape, 16, 32, magic=b"n+2\0"), f.astype("<f4").tobytes(order="F"))
    write("pair_ni1.nii", header("<", shape, 16, 32, magic=b"ni1\0"), b"")
    write("uint8.nii", header("<", shape, 2, 8), bytes(np.prod(shape)))

    (OUT / "expected.json").write_text(json.dumps(expected, indent=1) + "\n")


if __name__ == "__main__":
    main()
