"""Entropy and regularity analysis of card-transaction visit sequences."""

__version__ = "0.1.0"

from .entropy import (
    entropy_distribution,
    entropy_report,
    lz_entropy,
    max_predictability,
    random_entropy,
    true_entropy,
    uncorrelated_entropy,
)
from .errors import ShopEntropyError, ValidationError
from .experiments import (
    SimulationConfig,
    bundling_score,
    cohort_summary,
    overlap_probability,
    overlap_report,
    run_entropy_simulation,
    shuffle_within_day,
    sort_within_week,
    window_stability,
)
from .ingest import Dataset, load_dataset, parse_transactions, segment_cohorts
from .model import EntropyReport, EventSequence, Transaction, Visit, Window, build_sequence
from .structure import fit_zipf, population_graph, predictable_quintile, rank_curve, transition_graph
from .synthgen import PRESETS, PopulationSpec, generate_population

__all__ = [
    "PRESETS", "Dataset", "EntropyReport", "EventSequence", "PopulationSpec", "ShopEntropyError",
    "SimulationConfig", "Transaction", "ValidationError", "Visit", "Window", "build_sequence",
    "bundling_score", "cohort_summary", "entropy_distribution", "entropy_report", "fit_zipf",
    "generate_population", "load_dataset", "lz_entropy", "max_predictability", "overlap_probability",
    "overlap_report", "parse_transactions", "population_graph", "predictable_quintile",
    "random_entropy", "rank_curve", "run_entropy_simulation", "segment_cohorts",
    "shuffle_within_day", "sort_within_week", "transition_graph", "true_entropy",
    "uncorrelated_entropy", "window_stability",
]
