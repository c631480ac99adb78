"""evotss: spatial birth-death-mutation laboratory.

Four linked levels of description of the same evolving population:

* ibm      -- exact stochastic engine (thinning + reflected Brownian motion)
* pde      -- deterministic large-population limit for finitely many traits
* spectral / survival -- equilibrium profiles, invasion fitness, and the
                         branching-survival probabilities that price mutants
* tss      -- the limiting jump chain over monomorphic equilibria
"""

from . import config, domain, ibm, pde, spectral, survival, tss
from .config import ModelSpec, load_preset, parse_config, render_config

__version__ = "0.1.0"

__all__ = ["config", "domain", "ibm", "pde", "spectral", "survival", "tss",
           "ModelSpec", "load_preset", "parse_config", "render_config",
           "__version__"]
