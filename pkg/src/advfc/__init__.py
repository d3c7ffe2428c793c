"""Adversarial data augmentation for function-calling models.

An attacker policy rewrites seed queries, a two-stage judge keeps only
rewrites that still map to the original call, and failures of the defender
on those rewrites become training data for the next round.
"""
from .arena import Arena, evaluate, run
from .callspec import CanonicalCall, Calls, REFUSAL, Refusal, answers_equal, diff_answers, parse_answer
from .config import RunConfig, load_config
from .corpus import SeedRecord, load_seed_dataset
from .defender import SimulatedDefender, WeaknessProfile
from .rewriter import PolicyParams, RewrittenQuery, sample_rewrite

__version__ = "0.1.0"

__all__ = [
    "Arena", "evaluate", "run", "CanonicalCall", "Calls", "REFUSAL", "Refusal", "answers_equal",
    "diff_answers", "parse_answer", "RunConfig", "load_config", "SeedRecord", "load_seed_dataset",
    "SimulatedDefender", "WeaknessProfile", "PolicyParams", "RewrittenQuery", "sample_rewrite",
]
