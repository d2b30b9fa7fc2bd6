"""Belief Optimization: direct minimization of the Bethe free energy for binary pairwise MRFs."""
