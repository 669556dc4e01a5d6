"""Numerical verification toolkit for rank-one convex functions on matrix spaces."""

from .convex1d import (
    AtomicMeasure1D,
    IntervalUnion,
    MaximalProfile,
    PLConvex1D,
    convex_taylor_check,
    fubini_tail_experiment,
    l1_ball_containment,
    maximal_function,
    second_derivative_measure,
    superlevel,
    weak_one_one_check,
)
from .core import (
    CapacityError,
    Grid,
    GridSpec,
    MatrixPoint,
    MatrixShape,
    RankOneDirection,
    SampledField,
    ball_samples,
    ball_volume,
    coordinate_directions,
    grid_spec,
    gradient_field,
    make_grid,
    sample,
)
from .corpus import ConvexityFlags, FunctionHandle, corpus, corpus_names, get_handle
from .envelope import (
    ConeEnvelopePair,
    RemainderProfile,
    TouchSet,
    cone_convolutions,
    cone_touch_check,
    sandwich_check,
    second_order_remainder,
    touch_set,
)
from .lowerbound import (
    ColumnSplit,
    RadialMajorant,
    TangencyError,
    column_split,
    empirical_majorant,
    lemma_constant,
    lower_bound_certify,
    majorant_from_theta,
)
from .paraboloid import (
    ParaboloidTouch,
    TailReport,
    ThetaField,
    ThetaSolver,
    tail_experiment,
    theta_field,
    theta_upper,
    theta_upper_bruteforce,
)
from .verify import (
    ConvexityReport,
    SegmentSampler,
    SymmetricOperator,
    assemble_symmetric_operator,
    lipschitz_estimate_check,
    mollify,
    rank_one_convexity_check,
    separate_convexity_check,
    symmetric_operator_check,
    viscosity_subharmonic_check,
)

__version__ = "0.1.0"
