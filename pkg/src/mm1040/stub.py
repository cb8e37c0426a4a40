"""Line-protocol wrapper around the built-in engines.

    python -m mm1040.stub [--mutant M3]

Reads one JSON record per line on stdin and answers with the federal tax
return in dollars. Handy as an external SUT and as a template for adapters
around real tax programs.
"""
import argparse
import json
import sys

from .engine import TaxReturnInput, mutant_engine, reference_engine
from .money import dollars


def serve(engine, stdin=sys.stdin, stdout=sys.stdout):
    for line in stdin:
        if not line.strip():
            continue
        record = TaxReturnInput.from_wire(json.loads(line))
        stdout.write(f"{dollars(engine(record))}\n")
        stdout.flush()


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m mm1040.stub")
    ap.add_argument("--mutant", help="serve a seeded-fault engine instead of the reference")
    args = ap.parse_args(argv)
    engine = mutant_engine(args.mutant) if args.mutant else reference_engine()
    serve(engine)


if __name__ == "__main__":
    main()
