"""Voxel vs point graphs and MFRL vs SFRL-only, averaged over seeds.

    python scripts/ablation.py --train 150 --epochs 20 --seeds 0 1 2
"""
import argparse

from eventgraph import config as C
from eventgraph.datasets import make_split, to_graphs
from eventgraph.train import repeat_runs


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--train", type=int, default=150, help="training streams used (prefix of the train split)")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    cfg = C.load(presets=["desk"], overrides={"optim.epochs": args.epochs})
    train_samples = make_split(cfg.scene, "train")[: args.train]
    test_samples = make_split(cfg.scene, "test")
    variants = {
        "voxel + MFRL": (cfg.model, "voxel"),
        "voxel + SFRL": (cfg.model.replace(mfrl_mode="sfrl"), "voxel"),
        "point + MFRL": (cfg.model.replace(graph_mode="point"), "point"),
    }
    for name, (model_cfg, mode) in variants.items():
        g_train = to_graphs(train_samples, cfg.voxel, mode)
        g_test = to_graphs(test_samples, cfg.voxel, mode, seed=10**6)
        summary = repeat_runs(model_cfg, g_train, cfg.optim, args.seeds, g_test)
        accs = ", ".join(f"{a:.3f}" for a in summary.accuracies)
        print(f"{name:14s} mean {summary.mean:.3f} std {summary.std:.3f} [{accs}]", flush=True)


if __name__ == "__main__":
    main()
