"""Accuracy of one trained checkpoint as the vertex budget N_p changes.

Trains at the desk config (N_p = 512) unless --checkpoint is given, then
rebuilds the test graphs at every density in --densities.

    python scripts/density_sweep.py --densities 256 384 512 640 768 1024
"""
import argparse
import dataclasses

from eventgraph import config as C
from eventgraph.datasets import make_split, to_graphs
from eventgraph.nn import load_checkpoint
from eventgraph.train import evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--checkpoint", help="EVCK file trained with the desk preset")
    ap.add_argument("--densities", type=int, nargs="+", default=[384, 512, 640, 768])
    args = ap.parse_args()

    cfg = C.load(presets=["desk"])
    test_samples = make_split(cfg.scene, "test")
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
    else:
        g_train = to_graphs(make_split(cfg.scene, "train"), cfg.voxel)
        _, _, model = train(cfg.model, g_train, cfg.optim)
        state = model.state_dict()
    print("n_points,accuracy")
    for n_p in args.densities:
        graphs = to_graphs(test_samples, dataclasses.replace(cfg.voxel, n_points=n_p))
        acc, _ = evaluate(cfg.model, state, graphs)
        print(f"{n_p},{acc:.4f}", flush=True)


if __name__ == "__main__":
    main()
