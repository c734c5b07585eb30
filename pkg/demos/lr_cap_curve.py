"""How the fine-tuning learning-rate cap moves as the model shrinks.

alpha is the fraction of parameters still present. A heavily pruned model
gets a smaller cap; p sets where half of the reduction is reached and
beta how sharply it switches.
"""

import numpy as np

from iceprune import LrHyper, max_lr

alphas = np.linspace(0, 1, 11)
print("alpha  " + " ".join(f"{a:>7.1f}" for a in alphas))
for p in (0.2, 0.35, 0.5):
    for beta in (1.0, 4.0):
        h = LrHyper(lr_base=0.001, delta=0.0005, p=p, beta=beta)
        caps = [max_lr(a, h) * 1e4 for a in alphas]
        print(f"p={p:<4} b={beta:<3} " + " ".join(f"{c:>7.3f}" for c in caps) + "   (x1e-4)")
