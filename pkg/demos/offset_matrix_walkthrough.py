"""Score a trained checkpoint under every evaluation-time (slot offset, feature offset) pair.

    python3 demos/offset_matrix_walkthrough.py CHECKPOINT [--out matrix.png]

Standard evaluation feeds the transitioner the latest slots (offset 1) and
the next frame's features (offset 0).  The matrix replaces that pair with
older ones.  Rows and columns run oldest first, so the standard pair is the
bottom-right cell.  Without a checkpoint argument the acceptance run for seed
0 is used (it is trained on first use).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from vidslots.analysis import offset_matrix
from vidslots.eval import evaluate_model
from vidslots.plot import plot_matrix
from vidslots.train import load_checkpoint


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("checkpoint", nargs="?")
    parser.add_argument("--out", default="matrix.png")
    parser.add_argument("--metric", default="ARI_fg")
    args = parser.parse_args()

    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
    import acceptance_setup as acc

    _, _, test = acc.datasets()
    path = args.checkpoint or f"{acc.run('randsfq', 0)['run_dir']}/best.ckpt"
    model, meta = load_checkpoint(path)
    print(f"checkpoint step {meta['step']}, window {model.cfg.window_size}")

    mat = offset_matrix(model, test, args.metric)
    np.set_printoptions(precision=1, suppress=True)
    print("rows: slot offset", mat.slot_offsets, "| columns: feature offset", mat.feature_offsets)
    print(100 * mat.values)
    print("boundary fallbacks per cell\n", mat.fallbacks)
    print(f"bottom-right 2x2 {100 * mat.block_mean('bottom_right'):.1f}, "
          f"top-left 2x2 {100 * mat.block_mean('top_left'):.1f}")
    # the freshest cell is exactly the standard evaluation
    standard = evaluate_model(model, test).aggregate[args.metric]
    print("cell (1, 0) == standard eval:", mat.at(1, 0) == standard)
    print("wrote", plot_matrix(mat.to_dict(), args.out))


if __name__ == "__main__":
    main()
