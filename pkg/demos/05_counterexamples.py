"""The two counterexample families and the integral diagnostics.

Run: python3 demos/05_counterexamples.py   (about two minutes)
"""

from fractalcover import measure as ms

balls = ms.ball_measure(2)
rational = ms.make_measure("rational", k_max=20)
sieve = ms.make_measure("sieve", n_max=12)

for name, m in (("balls", balls), ("rational union", rational), ("sieve complement", sieve)):
    ext = ms.extracond_trend(m, 12)
    thin = ms.thinness_trend(m, 12)
    lo, hi, why = m.atoms[0][0].boundary_volume_bounds()
    print(f"{name}: extracond {ext.verdict} (last value {ext.values[ext.resolved_k - 1]:.4f}), "
          f"thinness {thin.verdict}; boundary volume in [{float(lo):.3g}, {float(hi):.3g}] ({why})")

# The sieve integral grows by roughly 1/(2k) per dyadic step.
ext = ms.extracond_trend(sieve, 12)
print("sieve increments:", [round(float(x), 4) for x in ext.increments])
