"""rcx: pseudo-spectral experiments in enhanced dissipation and magnetic reconnection.

Modules
-------
spectral    periodic fields, multipliers, Littlewood-Paley tools, norms, IO
advdiff     scalar advection-diffusion, dissipation times, rate fits
mhd3d       3D resistive MHD, 2.5D reference family, lifespan estimate
topology    equilibrium points, classification, reconnection criteria
stochastic  forced 2D Navier-Stokes, noise calculus, uniform-decay experiment
harness     configs, sweep orchestration, scaling fits, CLI
"""

from . import advdiff, mhd3d, spectral, stochastic, topology

__all__ = ["spectral", "advdiff", "mhd3d", "topology", "stochastic"]
__version__ = "0.1.0"
