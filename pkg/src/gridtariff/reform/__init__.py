from .blocks import (
    AuxVarMap,
    SymRow,
    build_dual_block,
    build_strong_duality,
    linearize_products,
    substitute_merchandising,
)
from .lemma import LemmaReport, verify_lemma1
from .single import BigMTable, SingleLevelProblem, UnboundedProduct, assemble_single_level

__all__ = [
    "AuxVarMap",
    "BigMTable",
    "LemmaReport",
    "SingleLevelProblem",
    "SymRow",
    "UnboundedProduct",
    "assemble_single_level",
    "build_dual_block",
    "build_strong_duality",
    "linearize_products",
    "substitute_merchandising",
    "verify_lemma1",
]
