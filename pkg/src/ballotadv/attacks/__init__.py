"""Gradient-based evasion attacks under lp perturbation budgets."""
from .pgd import (KINDS, AdvExample, AttackConfig, AttackConfigError, BatchResult,
                  NormConstraint, attack_batch, checkpoints, pgd_attack)
from .projections import (project_box, project_l0_linf, project_l0_sigma, project_l0_topk,
                          project_l1, project_l2, project_linf, sigma_map)
from .sweep import (BUDGET_GRIDS, IMPERCEPTIBLE, SweepRow, attack_sweep, default_config,
                    grid_configs, imperceptible_configs, robust_accuracy, run_attack,
                    write_robust_table, write_sweep_csv)
