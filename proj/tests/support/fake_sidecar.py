#!/usr/bin/env python3
"""Stand-in for the embedding sidecar: same CLI, deterministic toy vectors."""
import argparse
import json
import struct
import sys

DIM = 8


def vector(text):
    v = [0.0] * DIM
    for i, ch in enumerate(text):
        v[(ord(ch) + i) % DIM] += 1.0
    v[0] += 1.0
    return v


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--in", dest="inp", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--model", required=True)
    ap.add_argument("--batch", type=int, required=True)
    args = ap.parse_args()

    rows = []
    with open(args.inp, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                item = json.loads(line)
                rows.append((item["id"], item["text"]))
    if any(a == "fail" for a, _ in rows):
        sys.exit(3)

    with open(args.out, "wb") as fh:
        fh.write(b"EMB1" + struct.pack("<II", DIM, len(rows)))
        for rid, text in rows:
            raw = rid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<%df" % DIM, *vector(text)))
    with open(args.out + ".args.json", "w", encoding="utf-8") as fh:
        json.dump({"model": args.model, "batch": args.batch}, fh)


if __name__ == "__main__":
    main()
