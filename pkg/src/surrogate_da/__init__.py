"""Composing a learned surrogate observation operator for particle-filter data assimilation."""
from .assimilate import (MergeCoefficients, MergingParticleFilter, ParticleEnsemble, estimate,
                         init_ensemble, merge_refilter, predict_ensemble, reweight, run_filter,
                         systematic_resample)
from .driver import (EvaluationReport, ExperimentConfig, SurrogateComposer, generate, improvement_rate,
                     run_algorithm1, run_all, run_baseline)
from .exceptions import (DegenerateLikelihoodError, DivergedTrainingError, NumericalOverflowError,
                         PipelineError, SurrogateDAError)
from .model import Lorenz96Params, NoiseSpec, forward_map, lorenz96_rhs, rk4_step
from .neural import (MLPCorrection, MlpNetwork, OptimizerConfig, TrainingDataset, forward,
                     gradient, init_network, relaxed_cost, sgd_step, train)
from .observe import LinearObservationOperator, apply, generate_twin_data, make_banded_operator
from .surrogate import SurrogateOperator, build_dataset, predict_observable, surrogate_apply

__version__ = "0.1.0"
