"""Upper bounds on the log-partition function of pairwise CRFs via
worst-case optimal submodular extensions and Frank-Wolfe."""

from .densekernel import KernelMixture, build_stereo_model, kernel_value, signed_rank_sums, weighted_sum
from .extension import (ExtensionKind, extension_eval, greedy_vertex, in_extended_polymatroid,
                        is_submodular, lovasz_eval)
from .inference import (SolverConfig, StepRule, conditional_gradient, frank_wolfe, line_search,
                        marginals, neg_gradient, objective_g, objective_g_T)
from .lpgrad import dense_lp_subgradient, lp_objective_hier, lp_objective_potts, lp_subgradient
from .model import (CrfInstance, HierTree, decode_labeling, encode_labeling, energy_eval,
                    is_valid_assignment, star_tree, tree_distance, validate_tree)
from .oracle import check_factorization, enumerate_exact, mean_field, sandwich_report
from .synthetic import generate_synthetic

__version__ = "0.1.0"
