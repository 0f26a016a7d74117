"""Sampling a realization and classifying dyadic boxes.

Run: python3 demos/02_sampling_and_boxes.py
"""

import math

import numpy as np

from fractalcover.boxes import classify_boxes, minimal_cover_count, not_covered_counts
from fractalcover.measure import ball_measure, exclusion_measure, expected_not_covered, expected_untouched
from fractalcover.sampler import LazyProcess, SampleConfig, expected_band_count, sample_process

balls = ball_measure(2)
cfg = SampleConfig(balls, 0.3, 6, seed=1)
r = sample_process(cfg)
print(f"{len(r)} sets; per band {r.band_counts()}")
print("expected per band", [round(expected_band_count(cfg, l), 1) for l in range(1, 7)])

# m_n: boxes no set touches; M_n: boxes no single set contains.
for n in (2, 4, 6):
    c = classify_boxes(r, n)
    value, lo, hi = minimal_cover_count(r, n)
    print(f"n = {n}: |m_n| = {c.m_count} (mean {expected_untouched(balls, 0.3, n):.1f}), "
          f"|M_n| = {c.M_count} (mean {expected_not_covered(balls, 0.3, n):.1f}), L_n = {value}")

# Thinning couples intensities: fewer sets touch fewer boxes.
half = r.thin(0.15)
print(f"after thinning to 0.15: {len(half)} sets, |m_6| = {classify_boxes(half, 6).m_count}")

# The untouched fraction matches the exclusion measure.
frac = [classify_boxes(LazyProcess(SampleConfig(balls, 0.3, 6, seed=s)), 6).m_count / 4096
        for s in range(300)]
exact = math.exp(-0.3 * exclusion_measure(balls, 2.0 ** -6, 0, 6))
print(f"untouched fraction {np.mean(frac):.5f} +- {np.std(frac) / math.sqrt(300):.5f}, exact {exact:.5f}")

# Deep levels are generated lazily, refining only boxes still in M_k.
deep = LazyProcess(SampleConfig(balls, 1.0, 16, seed=3))
print("|M_k| for k = 1..16:", not_covered_counts(deep, 16))
