"""numprog: a numerical-reasoning program toolchain.

Programs are sequences of operator applications over numbers quoted from a
word problem, named constants and cached intermediate results.  The package
provides parsers/serializers for four textual formats, a reference executor,
scoring metrics, a synthetic problem generator, and a trainable
encoder/decoder model that maps problem text to programs.
"""

from .executor import Bindings, ExecutionTrace, compare_answers, execute
from .formats import parse_flattened, parse_nested, serialize_flattened, to_nested, to_preorder, to_sequential
from .ir import (
    Cache,
    Const,
    ConstantTable,
    NONE,
    NoneTok,
    Num,
    OperatorRegistry,
    OperatorSpec,
    Program,
    SubProgram,
    canonicalize,
    default_constants,
    default_registry,
    register_operator,
    validate,
)

__version__ = "0.1.0"
