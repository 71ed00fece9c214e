#!/usr/bin/env python3
"""Learnable scalar count of the default H3.6M model, summed from layer shapes.

Counts, per GCL, A (K x K), W (F_in x F_out) and per-entry norm gamma/beta
(2 x K x F_out); per resampling transition the node map and feature map.
"""

K = [66, 36, 21, 12]
F = [64, 128, 256, 512]
T = 35
BLOCKS = 3


def gcl(k, fin, fout):
    return k * k + fin * fout + 2 * k * fout


def res(k, f):
    return 2 * gcl(k, f, f)


total = gcl(K[0], T, F[0]) + res(K[0], F[0])
for s in range(4):
    total += 2 * BLOCKS * res(K[s], F[s])  # D_s and A_s
    total += res(K[s], F[s]) + gcl(K[s], F[s], T)  # E_s
for s in range(3):
    total += 2 * (K[s] * K[s + 1] + F[s] * F[s + 1])  # downsample s, upsample s
print(total)
