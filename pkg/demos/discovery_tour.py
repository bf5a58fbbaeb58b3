"""A short tour: synthetic clips, a brief training run, then object-discovery scores and masks.

    python3 demos/discovery_tour.py [--steps 300] [--out demo_out]

The default budget takes a few minutes on a CPU.  Scores are far below a
full run; the point is to see every stage produce its artifact.
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from vidslots.core import OptimConfig, RunConfig  # noqa: E402
from vidslots.data import DatasetConfig, generate_clips  # noqa: E402
from vidslots.eval import evaluate_model, run_clips  # noqa: E402
from vidslots.train import train_loop  # noqa: E402


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--out", default="demo_out")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)

    cfg = RunConfig(n_slots=6, clip_len=12, window_size=3, train_clip_len=8,
                    optim=OptimConfig(steps=args.steps, batch_size=8, eval_every=100, n_val_clips=8)).validate()
    dcfg = DatasetConfig.from_run(cfg)
    train, val, test = (generate_clips(dcfg, n, seed, prefix=p)
                        for n, seed, p in ((64, 1, "train"), (8, 2, "val"), (8, 3, "test")))

    result = train_loop(cfg, train, val, out / "run")
    print(f"loss {result.initial_loss:.4f} -> {result.final_loss:.4f}")

    # held-out object discovery with the standard (1, 0) pairing
    report = evaluate_model(result.model, test)
    print("test", {k: round(v, 3) for k, v in report.aggregate.items()})

    clip, outputs = test[0], run_clips(result.model, test[:1])[0]
    frames = range(0, cfg.clip_len, 3)
    fig, axes = plt.subplots(3, len(frames), figsize=(2 * len(frames), 6))
    for col, t in enumerate(frames):
        for row, (img, title) in enumerate(((clip.frames[t], "frame"), (clip.gt_masks[t], "ground truth"),
                                            (outputs.masks[t], "slots"))):
            axes[row, col].imshow(img, cmap=None if row == 0 else "tab10", interpolation="nearest")
            axes[row, col].set_axis_off()
            axes[row, col].set_title(f"{title} t={t + 1}", fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "masks.png", dpi=110)
    print("wrote", out / "masks.png")


if __name__ == "__main__":
    main()
