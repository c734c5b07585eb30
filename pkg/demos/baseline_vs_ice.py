"""Prune a small CNN twice: once the slow way, once with the gated pipeline.

The baseline fine-tunes for an epoch after every pruning step. The gated
pipeline first searches a handful of hyperparameters on a 10% subsample,
then reruns with the winner, fine-tuning only when accuracy has fallen far
enough, with some layers frozen and a learning rate capped by how much of
the model is left.

    python demos/baseline_vs_ice.py [seed]
"""

import sys

from iceprune import (Criterion, FineTuneConfig, SearchSpace, baseline_pipeline, evaluate,
                      ice_pipeline, reference_cnn, synthetic_splits, train_model, uniform_schedule)

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

# Ten classes, 500 training images each, 3x16x16 pixels.
train, test = synthetic_splits(10, 500, 100, (3, 16, 16), seed=seed, noise=1.5)
net = reference_cnn((3, 16, 16), 10, seed=seed)
train_model(net, train, epochs=8, lr=0.01, batch_size=64, seed=seed)
print(f"pretrained accuracy {evaluate(net, test):.3f}")

# Four prunable layers, 60% of each one's filters or units removed in turn.
schedule = uniform_schedule(net, 0.6)
ft = FineTuneConfig(batch_size=64)

_, base = baseline_pipeline(net, schedule, train, test, Criterion("l1_norm"), 0.001, ft, seed)

grid = SearchSpace({
    "theta": (0.05, 0.1),      # accuracy drop that triggers fine-tuning
    "eta": (0.25, 0.5),        # share of layers to freeze
    "lr_base": (0.001,),
    "delta": (0.0005,),
    "p": (0.3, 0.5),
    "beta": (2.0,),
})
_, ice, tune = ice_pipeline(net, schedule, grid, train, test, ft=ft, seed=seed)

print(f"best hyperparameters {tune.best.flat()}")
print(f"{'':10}{'accuracy':>10}{'seconds':>10}{'fine-tunes':>12}")
for name, r in (("baseline", base), ("gated", ice)):
    print(f"{name:10}{r.final_accuracy:>10.3f}{r.total_seconds:>10.2f}{r.fine_tune_count:>12}")
print(f"speedup {base.total_seconds / ice.total_seconds:.2f}x "
      f"(search itself took {ice.config['stage1_seconds']:.1f}s)")
