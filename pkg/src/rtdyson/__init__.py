"""rtdyson: quasilinear-time solver for kernel-nonlinear Volterra
integro-differential equations, with a real-time equilibrium Dyson
equation front end (Bethe lattice and SYK models)."""

__version__ = "0.1.0"
