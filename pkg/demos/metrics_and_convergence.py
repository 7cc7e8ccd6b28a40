"""
Ranking metrics and convergence jitter
======================================

AuROC counts correctly ordered (positive, negative) pairs. The harmonic AuPR
is the harmonic mean of the precision-recall areas of both classes, so it
punishes a model that only gets one class right. mstd is the spread of an error curve around
its running median and measures how noisily training converges.
"""

import numpy as np

from hagnet.metrics import aupr_harmonic, auroc, average_precision, error_rate, median_filter, mstd

scores = np.array([0.9, 0.8, 0.7, 0.6, 0.55, 0.4, 0.3, 0.1])
labels = np.array([1, 1, 0, 1, 0, 0, 1, 0])
print("error rate  ", error_rate(scores, labels))
print("AuROC       ", auroc(scores, labels))
print("AP (class 1)", average_precision(scores, labels))
print("AP (class 0)", average_precision(1 - scores, 1 - labels))
print("harmonic    ", aupr_harmonic(scores, labels))

# a lone spike disappears under a window of three, leaving a residual of 100 at one step
spike = [0.0, 100.0, 0.0, 0.0, 0.0]
print("median filter", median_filter(spike, 1).values, "mstd", mstd(spike, 1))

# a smooth decay jitters less than the same decay with noise on top
epochs = np.arange(60)
smooth = 0.5 * np.exp(-epochs / 15)
noisy = smooth + np.random.default_rng(0).normal(0, 0.03, size=60)
print(f"mstd smooth {mstd(smooth):.4f}  noisy {mstd(noisy):.4f}")
