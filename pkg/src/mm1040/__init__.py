"""Metamorphic testing of Form 1040 (tax year 2020) engines, with tree-based failure explanations."""
from .engine import FilingStatus, MutantId, TaxConfig, TaxEngine, TaxReturnInput, mutant_engine, reference_engine
from .generator import GeneratorConfig, RunResult, Verdict, required_consecutive_passes, run_relation
from .relations import catalog, relation

__version__ = "0.1.0"

__all__ = [
    "FilingStatus", "MutantId", "TaxConfig", "TaxEngine", "TaxReturnInput", "mutant_engine",
    "reference_engine", "GeneratorConfig", "RunResult", "Verdict", "required_consecutive_passes",
    "run_relation", "catalog", "relation",
]
