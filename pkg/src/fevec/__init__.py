"""Cross-element SIMD vectorization of finite-element assembly kernels.

The pipeline: build a local assembly kernel in a small loop IR, fuse it into
a global gather/compute/scatter wrapper over mesh cells, split the cell loop
by a batch width, SIMD-tag the lane with vector expansion of temporaries,
and emit C for scalar, pragma-annotated, or vector-extension targets.  A
sequential interpreter and a straight-line numpy assembler serve as oracles.
"""

from .bench import (
    BenchmarkRecord,
    CSV_COLUMNS,
    arithmetic_intensity,
    roofline_rows,
    run_configuration,
)
from .codegen import EmittedUnit, Target, emit
from .elements import (
    OperatorSpec,
    QuadratureRule,
    ReferenceElement,
    operator_spec,
    quadrature_rule,
    reference_cell,
    reference_element,
    tabulate,
)
from .interp import interpret
from .ir import FlopCount, LoopKernel
from .ir_text import dump_kernel, parse_kernel
from .jit import Toolchain, compile_and_load
from .kernels import build_local_kernel
from .mesh import DofMap, Mesh, build_dof_map, build_mesh
from .reference import assemble_reference
from .transforms import (
    BatchPlan,
    MapsSpec,
    build_global_wrapper,
    main_extent,
    maps_for,
    split_iname,
    tag_simd,
    vectorize_pipeline,
)

__version__ = "0.1.0"
