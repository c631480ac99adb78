from .engine import (BranchingOutcome, EventLog, Population, SimResult,
                     StopOnFlatExit, StopOnMonomorphic, StopOnMutation,
                     StopOnPopSize, StopOnTraitMass,
                     equilibrium_population, run_branching, simulate)
from .experiments import (dimorphic_invasion_experiment,
                          estimate_survival_mc,
                          first_mutation_law_experiment,
                          growth_time_experiment,
                          residence_time_experiment)

__all__ = [
    "BranchingOutcome", "EventLog", "Population", "SimResult",
    "StopOnFlatExit", "StopOnMonomorphic", "StopOnMutation", "StopOnPopSize",
    "StopOnTraitMass",
    "equilibrium_population", "run_branching", "simulate",
    "dimorphic_invasion_experiment", "estimate_survival_mc",
    "first_mutation_law_experiment", "growth_time_experiment",
    "residence_time_experiment",
]
