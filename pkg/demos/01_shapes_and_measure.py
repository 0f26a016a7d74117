"""Shape templates and the measure calculus behind the critical intensity.

Run: python3 demos/01_shapes_and_measure.py
"""

import math

from fractalcover import measure as ms
from fractalcover.shapes import Ball, KochSnowflake, box_dimension, covering_number, layer_volume

# Templates have diameter 1 and are anchored at the origin.
disc = Ball(2)
koch = KochSnowflake()
print(f"disc area {disc.volume():.6f} (pi/4 = {math.pi / 4:.6f})")
print(f"snowflake polygon area (K = {koch.iterations}) {koch.volume():.6f}, "
      f"limit {koch.measure_volume:.6f}")

# Enlargement, shrinkage and boundary layers.
for r in (0.05, 0.25, 0.5):
    e, s = layer_volume(disc, (r, "enlarge")), layer_volume(disc, (r, "shrink"))
    print(f"disc r = {r}: enlarge {e:.4f}, shrink {s:.4f}")

# The snowflake boundary has box dimension log 4 / log 3.
print(f"covering number of the snowflake boundary at r = 1/64: {covering_number(koch, 1 / 64)}")
print(f"fitted box dimension {box_dimension(koch):.4f} vs {math.log(4) / math.log(3):.4f}")

# Scale-invariant measures and their critical intensities.
for name, m in (("balls", ms.ball_measure(2)), ("snowflakes", ms.make_measure("snowflake"))):
    print(f"{name}: mu(A_1) = {ms.mu_A1(m):.6f}, lambda_e = {ms.lambda_e_closed(m):.6f}")

# The sandwich sequences bracket mu(A_1) and converge to it.
balls = ms.ball_measure(2)
for n in (1, 5, 10, 20):
    a, b = ms.a1_sequence(balls, n).value, ms.b1_sequence(balls, n).value
    print(f"n = {n:2d}: {b:.6f} <= {ms.mu_A1(balls):.6f} <= {a:.6f}")
