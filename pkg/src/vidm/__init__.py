"""Decision-making and model learning as variational inference, at desk scale.

Submodules:
    core_prob   finite-probability primitives and seeded random streams
    evidence    exact posterior, ELBO and evidence gap on a parameter grid
    bandit      KL-regularized contextual bandits and Blahut-Arimoto
    soft_mdp    finite-horizon soft backward induction and brute-force oracles
    model_vi    Dirichlet posteriors over transition tables
    pomdp_vi    mean-field CAVI for discrete POMDP models, prediction, filtering
    envs        gridworlds, random environments, data collection
    io, cli     file formats, run reports and the ``vidm`` command
"""

from . import bandit, core_prob, envs, evidence, model_vi, pomdp_vi, soft_mdp
from .errors import (
    EmptyBatch,
    EmptyInput,
    InvalidDistribution,
    InvalidSpec,
    NotConverged,
    ShapeMismatch,
    SupportViolation,
    TooLarge,
    VidmError,
    ZeroEvidence,
    ZeroLikelihoodPrefix,
)

__version__ = "0.1.0"
