"""Selective constraint abstraction for hybrid fuzzing of a small contract VM."""

from .anchoring import AnchoredSplit, anchored_decompose
from .coreselect import CannedTransport, HttpTransport, SelectionRequest, SelectionResponse, build_psi0, select_core
from .dispatch import Dispatcher, FingerprintCache, SolverConfig, dispatch_solve, fingerprint
from .harness import CampaignConfig, CampaignReport, run_campaign, write_report
from .ir import BranchGoal, Constraint, GoalFormula, PathCondition, eval_constraint, make_goal_formula
from .minivm import ContractProgram, TxInput, execute, load_contract
from .refine import RefinementResult, concretize, refine_loop
from .solver import EnumerationBackend, SmtBackend, SolverStats, solve
from .symexec import collect_path
from .synthetic import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "AnchoredSplit",
    "BranchGoal",
    "CampaignConfig",
    "CampaignReport",
    "CannedTransport",
    "Constraint",
    "ContractProgram",
    "Dispatcher",
    "EnumerationBackend",
    "FingerprintCache",
    "GoalFormula",
    "HttpTransport",
    "PathCondition",
    "RefinementResult",
    "SelectionRequest",
    "SelectionResponse",
    "SmtBackend",
    "SolverConfig",
    "SolverStats",
    "SyntheticSpec",
    "TxInput",
    "anchored_decompose",
    "build_psi0",
    "collect_path",
    "concretize",
    "dispatch_solve",
    "eval_constraint",
    "execute",
    "fingerprint",
    "generate_synthetic",
    "load_contract",
    "make_goal_formula",
    "refine_loop",
    "run_campaign",
    "select_core",
    "solve",
    "write_report",
]
