"""Convex training of path-regularized three-layer parallel ReLU networks.

The pipeline: enumerate ReLU activation patterns on the data, build the
equivalent finite convex program over paired block variables, solve it with
an accelerated proximal method, certify the solution with a duality gap,
and map the optimum back to network weights in closed form.  A
rank-truncated pathway trades an explicit multiplicative optimality factor
for polynomial arrangement counts, and an SGD baseline supports
equivalence experiments.
"""

from .arrangements import (ActivationPattern, ArrangementSet, SignPattern,
                           enumerate_first_layer, enumerate_second_layer,
                           pattern_of, upper_bound_first, upper_bound_second,
                           verify_cone)
from .convex_program import (ConvexProgram, ConvexVariables, all_sign_patterns,
                             build, constraint_residuals, fit_value, group_norm,
                             objective)
from .network import (ParallelNet, TrainSpec, embed_resnet, embed_standard,
                      forward, objective_nonconvex, path_regularizer, rescale)
from .recovery import decode_index, recover_network, verify_equivalence
from .solver import (SolveOptions, SolveTrace, duality_gap,
                     group_soft_threshold, solve)
from .lowrank import bound_factor, choose_rank, transfer_objective, truncate
from .baseline import SgdConfig, grad_nonconvex, init_net, train_sgd

__version__ = "0.1.0"
