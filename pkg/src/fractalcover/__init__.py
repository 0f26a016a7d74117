"""Semi scale-invariant Poisson random fractals: shapes, measure, sampling, box analysis."""
