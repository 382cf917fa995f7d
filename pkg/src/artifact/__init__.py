"""Structure-preserving mixed least-squares finite elements for
advection-diffusion-reaction transport, with local species-balance and
bound-constrained solves, plus a fast-bimolecular reactive-mixing workflow."""

__version__ = "0.1.0"
