"""Threshold-sweep reference for FAR/FRR/EER, written with plain loops."""

import math


def sweep(genuine, impostor):
    cands = sorted(set(genuine) | set(impostor))
    thresholds = [-math.inf] + cands + [math.inf]
    far, frr = [], []
    for t in thresholds:
        far.append(sum(1 for s in impostor if s >= t) / len(impostor))
        frr.append(sum(1 for s in genuine if s < t) / len(genuine))
    return thresholds, far, frr


def eer(genuine, impostor):
    thr, far, frr = sweep(genuine, impostor)
    for k in range(len(thr)):
        d = far[k] - frr[k]
        if d == 0:
            return far[k]
        if d < 0:
            d0 = far[k - 1] - frr[k - 1]
            frac = d0 / (d0 - d)
            return far[k - 1] + frac * (far[k] - far[k - 1])
    raise AssertionError("the last sweep point always has far = 0 < frr = 1")
