"""Offline behaviour distillation on exactly solvable tabular MDPs."""
from .datasets import OfflineDataset, collect_dataset, load_dataset, make_tier_dataset, save_dataset
from .distill import DistillConfig, DistillReport, distill, meta_gradient
from .envs import make_gridworld, make_random_mdp
from .evaluation import EvalProtocol, EvalResult, evaluate_synthetic, ensemble_evaluate, random_selection_baseline
from .extract import Extraction, ExtractionConfig, extract
from .mdp import (TabularMdp, TabularPolicy, ValidationError, load_mdp, occupancy_measures,
                  policy_evaluation, save_mdp)
from .synthetic import SyntheticDataset
from .theory import (BoundCheckReport, check_corollary1, check_eq8, check_theorem1,
                     construct_tightness_case, performance_gap_identity, verify_theory)

__version__ = "0.1.0"
