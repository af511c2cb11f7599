#!/usr/bin/env python3
"""Toy program-under-test.

usage: toy PARAMFILE

Reads three ``key: value`` lines (seed, steps, perturb) and writes two files
into the working directory:

field.dat
    ``steps`` big-endian unsigned 64-bit words.  Word i is the state of the
    linear congruential recurrence s <- (6364136223846793005 * s +
    1442695040888963407) mod 2**64 after i + 1 steps, started from
    s0 = seed mod 2**64, XORed with the IEEE-754 double bit pattern of
    perturb when perturb is nonzero.
summary.txt
    ``steps: N``, ``checksum: <sha256 of field.dat>``, ``status: complete``.

Only the standard library is used so the build step can copy this file
anywhere and run it with any Python 3.
"""

import hashlib
import struct
import sys

MULTIPLIER = 6364136223846793005
INCREMENT = 1442695040888963407
MASK = (1 << 64) - 1
COMPLETE = "status: complete"


def read_params(path):
    params = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition(":")
            if not sep:
                raise ValueError(f"bad parameter line: {line!r}")
            params[key.strip()] = value.strip()
    try:
        seed = int(params["seed"])
        steps = int(params["steps"])
        perturb = float(params["perturb"])
    except KeyError as exc:
        raise ValueError(f"missing parameter {exc}") from None
    if steps < 1:
        raise ValueError("steps must be at least 1")
    return seed, steps, perturb


def field_bytes(seed, steps, perturb=0.0):
    state = seed & MASK
    if perturb != 0:
        state ^= struct.unpack(">Q", struct.pack(">d", perturb))[0]
    out = bytearray()
    for _ in range(steps):
        state = (MULTIPLIER * state + INCREMENT) & MASK
        out += state.to_bytes(8, "big")
    return bytes(out)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        sys.stderr.write("usage: toy PARAMFILE\n")
        return 2
    try:
        seed, steps, perturb = read_params(argv[0])
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"toy: {exc}\n")
        return 2
    data = field_bytes(seed, steps, perturb)
    with open("field.dat", "wb") as fh:
        fh.write(data)
    with open("summary.txt", "w", encoding="utf-8") as fh:
        fh.write(f"steps: {steps}\n")
        fh.write(f"checksum: {hashlib.sha256(data).hexdigest()}\n")
        fh.write(COMPLETE + "\n")
    sys.stderr.write(f"toy: {steps} steps done\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
