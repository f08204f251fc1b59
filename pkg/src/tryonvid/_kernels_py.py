"""Numpy reference versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np


def rms_distance(a, b):
    d = np.asarray(a, dtype=np.float64).ravel() - np.asarray(b, dtype=np.float64).ravel()
    return float(np.sqrt(np.mean(d * d)))


def greedy_keyframes(poses, d_pose, s_max):
    poses = np.ascontiguousarray(poses, dtype=np.float64).reshape(len(poses), -1)
    n = poses.shape[0]
    keys = [0]
    i = 0
    while i < n - 1:
        nxt = i + 1
        # Scan from the farthest allowed stride down; the first hit is the largest admissible j.
        for j in range(min(i + s_max, n - 1), i, -1):
            if rms_distance(poses[i], poses[j]) < d_pose:
                nxt = j
                break
        keys.append(nxt)
        i = nxt
    return keys


def agn_loss_grad(S, in_mask, lambda_n, refined, want_grad=True):
    S = np.asarray(S, dtype=np.float64)
    A = np.asarray(in_mask, dtype=bool)
    neg = np.where(A, 0.0, S)
    loss = lambda_n * float(np.sum(neg * neg))
    grad = 2.0 * lambda_n * neg if want_grad else None
    if refined:
        masked = np.where(A, S, -np.inf)
        arg = np.argmax(masked, axis=1)
        top = masked[np.arange(S.shape[0]), arg]
        loss += float(np.sum((1.0 - top) ** 2))
        if want_grad:
            grad[np.arange(S.shape[0]), arg] = -2.0 * (1.0 - top)
    else:
        pos = np.where(A, 1.0 - S, 0.0)
        loss += float(np.sum(pos * pos))
        if want_grad:
            grad = grad - 2.0 * pos
    return loss, grad
