"""Serve a saved forest over the external-predictor line protocol.

    python -m flexcf.serve model.json
"""

import argparse
import json
import sys

import numpy as np

from .model import HANDSHAKE, load_model


def main(argv=None):
    parser = argparse.ArgumentParser(prog="python -m flexcf.serve")
    parser.add_argument("model", help="forest JSON written by ForestModel.dumps")
    args = parser.parse_args(argv)
    model = load_model(args.model)
    out = sys.stdout
    out.write(HANDSHAKE + "\n")
    out.flush()
    for line in sys.stdin:
        if not line.strip():
            continue
        row = np.asarray(json.loads(line), dtype=np.float64)
        out.write(f"{model.predict(row)}\n")
        out.flush()


if __name__ == "__main__":
    main()
