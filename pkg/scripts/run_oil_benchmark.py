"""Single-epoch online-incremental benchmark for the factor paradigms.

Every sample is seen once, so there is no room to re-fit old classes;
whatever the projection preserves is what survives.  Runs adapter and
lora, projection on vs off, over the given seeds.
"""

import argparse
import warnings
from dataclasses import replace

import numpy as np

import orthopet.backbone as bb
import orthopet.data as dm
import orthopet.metrics as mt
import orthopet.projection as pj
import orthopet.trainer as tr

MODEL = bb.TransformerConfig(dim=32, depth=2, heads=4, mlp_ratio=2.0, seq_len=4,
                             num_classes=10, prompt_len=8, rank=16)
DATA = dm.ScenarioSpec(scenario="oil", tasks=5, classes_per_task=2,
                       samples_per_class=200, feature_dim=64, noise=0.1,
                       separation=8.0)
TRAIN = tr.TrainConfig(epochs=1, batch_size=16, lr=0.03, optimizer="adam",
                       scenario="oil", seed=0, backbone_seed=0,
                       proj=pj.ProjectionConfig(epsilon=0.02, sample_count=32))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", default="0,1,2,3,4",
                        help="comma-separated run seeds")
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    tok = dm.make_tokenizer(DATA.feature_dim, MODEL.seq_len, MODEL.dim, 0)
    stream = dm.gen_stream(DATA, tok, 0)
    for paradigm in ("adapter", "lora"):
        means = {}
        for arm in (True, False):
            fgts, accs = [], []
            for seed in seeds:
                cfg = replace(TRAIN, seed=seed, projection=arm)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", pj.EmptyBasisWarning)
                    matrix, _ = tr.continual_run(stream, MODEL, paradigm, cfg)
                summary = mt.summarize(matrix)
                fgts.append(summary["forgetting"])
                accs.append(summary["avg_acc"])
            means[arm] = (float(np.mean(accs)), float(np.mean(fgts)))
        (acc_on, fgt_on), (acc_off, fgt_off) = means[True], means[False]
        print(f"{paradigm}: forgetting {fgt_on:.4f} vs {fgt_off:.4f} "
              f"({fgt_on - fgt_off:+.4f}), avg_acc {acc_on:.4f} vs {acc_off:.4f}")


if __name__ == "__main__":
    main()
