"""Train the desk-scale model on the synthetic shape task and report test accuracy.

    python scripts/train_shapes.py [--preset adam] [--set optim.epochs=20] [--out runs/shapes]
"""
import argparse
import json
import logging
import os
import time

from eventgraph import config as C
from eventgraph.datasets import make_split, to_graphs
from eventgraph.nn import save_checkpoint
from eventgraph.train import evaluate_model, train


def parse_sets(items):
    out = {}
    for item in items:
        key, _, value = item.partition("=")
        out[key] = value
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--preset", action="append", default=[], help="extra preset applied after 'desk'")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted config override")
    ap.add_argument("--out", help="write checkpoint, metrics and config here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = C.load(presets=["desk", *args.preset], overrides=parse_sets(args.set))
    start = time.perf_counter()
    train_samples, test_samples = make_split(cfg.scene, "train"), make_split(cfg.scene, "test")
    mode = cfg.model.graph_mode
    g_train = to_graphs(train_samples, cfg.voxel, mode, seed=cfg.optim.seed)
    g_test = to_graphs(test_samples, cfg.voxel, mode, seed=10**6)
    print(f"data ready in {time.perf_counter() - start:.0f}s: {len(g_train)} train / {len(g_test)} test graphs")

    result, best, model = train(cfg.model, g_train, cfg.optim, g_test)
    acc, confusion = evaluate_model(model, g_test)
    print(f"final test accuracy {acc:.3f} (best {result.best_accuracy:.3f} at epoch {result.best_epoch})")
    print("confusion (rows true, cols predicted):")
    print(confusion)
    print(f"total {time.perf_counter() - start:.0f}s")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        save_checkpoint(model.state_dict(), os.path.join(args.out, "last.evck"))
        save_checkpoint(best, os.path.join(args.out, "best.evck"))
        with open(os.path.join(args.out, "config.yaml"), "w") as f:
            f.write(cfg.to_yaml())
        with open(os.path.join(args.out, "metrics.json"), "w") as f:
            json.dump({**json.loads(result.to_json()), "confusion": confusion.tolist()}, f, indent=2)


if __name__ == "__main__":
    main()
