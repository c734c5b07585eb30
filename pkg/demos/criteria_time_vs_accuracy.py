"""Time against accuracy for the four ranking criteria under the gated pipeline.

Writes a CSV with one point per criterion, ready for any plotting tool.

    python demos/criteria_time_vs_accuracy.py out.csv
"""

import csv
import sys

from iceprune import (Criterion, FineTuneConfig, HyperParams, pft, reference_cnn, synthetic_splits,
                      train_model, uniform_schedule)
from iceprune.pruning import CRITERIA

out = sys.argv[1] if len(sys.argv) > 1 else "criteria.csv"
train, test = synthetic_splits(10, 300, 100, (3, 16, 16), seed=0, noise=1.5)
net = reference_cnn((3, 16, 16), 10, seed=0)
train_model(net, train, epochs=6, lr=0.01, batch_size=64)
schedule = uniform_schedule(net, 0.6)

rows = []
for kind in CRITERIA:
    _, rep = pft(net, schedule, HyperParams(0.05, 0.25), train, test, Criterion(kind),
                 ft=FineTuneConfig(batch_size=64))
    rows.append((kind, rep.total_seconds, rep.final_accuracy, rep.fine_tune_count))
    print(f"{kind:16} acc {rep.final_accuracy:.3f}  {rep.total_seconds:5.2f}s  "
          f"fine-tunes {rep.fine_tune_count}")

with open(out, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["criterion", "seconds", "accuracy", "fine_tunes"])
    w.writerows(rows)
print(f"wrote {out}")
