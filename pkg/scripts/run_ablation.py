"""Basis-size ablation: sweep the singular-value threshold epsilon.

Smaller epsilon keeps fewer allowed update directions, trading plasticity
for stability.  The sweep holds the benchmark geometry fixed so metric
movement is attributable to the threshold alone.
"""

import argparse
import warnings

import orthopet.backbone as bb
import orthopet.data as dm
import orthopet.eval as ev
import orthopet.projection as pj
import orthopet.trainer as tr

MODEL = bb.TransformerConfig(dim=32, depth=2, heads=4, mlp_ratio=2.0, seq_len=4,
                             num_classes=10, prompt_len=8, rank=4)
DATA = dm.ScenarioSpec(scenario="oil", tasks=5, classes_per_task=2,
                       samples_per_class=200, feature_dim=64, noise=0.05,
                       separation=12.0)
TRAIN = tr.TrainConfig(epochs=1, batch_size=16, lr=0.5, optimizer="adam",
                       scenario="oil", seed=0, backbone_seed=0,
                       proj=pj.ProjectionConfig(sample_count=32))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paradigm", default="lora", choices=("adapter", "lora"))
    parser.add_argument("--values", default="0.6,0.15,0.0001",
                        help="comma-separated epsilon values")
    parser.add_argument("--seeds", default="0,1,2,3,4",
                        help="comma-separated run seeds")
    args = parser.parse_args()
    values = [float(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", pj.EmptyBasisWarning)
        rows = ev.ablation_sweep(MODEL, DATA, args.paradigm, TRAIN,
                                 "epsilon", values, seeds)
    print(f"{args.paradigm}, {len(seeds)} seeds per point")
    for row in rows:
        print(f"epsilon {row['epsilon']:g}: columns {row['basis_columns']:.1f}, "
              f"avg_acc {row['avg_acc']:.4f}, forgetting {row['forgetting']:.4f}, "
              f"new_acc {row['new_acc']:.4f}")


if __name__ == "__main__":
    main()
