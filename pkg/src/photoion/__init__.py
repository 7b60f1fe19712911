"""Second-order photoionisation of a bound electron by a quantized photon field.

Submodules:

* ``photon_field``: mode grids, Fock vectors, creation and annihilation
* ``electron``: spherical square-well bound and scattering states
* ``coupling``: dipole-type interaction kernels and their norm constants
* ``ionisation``: transition amplitudes, energy-shell and finite-time probabilities
* ``bounds_lab``: numerical certification of operator inequalities
* ``pipelines`` and ``cli``: configuration-driven batch runs
"""

from .config import ConfigError, RunConfig, load, load_default

__version__ = "0.1.0"

__all__ = ["ConfigError", "RunConfig", "__version__", "load", "load_default"]
