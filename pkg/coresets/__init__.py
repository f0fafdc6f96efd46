"""Bayesian coresets by uniform subsampling and quasi-Newton weight refinement."""
