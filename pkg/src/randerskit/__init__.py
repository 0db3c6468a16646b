"""Numerical toolkit for Randers, Zermelo and Fermat metrics.

Build a structure from symbolic field data, integrate its geodesics,
enumerate the geodesics joining two points below an energy cap, and certify
finiteness with sample-based convexity checks.
"""

__version__ = "0.1.0"

from .convexity import (  # noqa: E402
    Certificate,
    HessianSample,
    certificate_fermat,
    certificate_for,
    certificate_randers,
    certificate_zermelo,
    fermat_H,
    finsler_hessian,
    properness_check,
)
from .errors import *  # noqa: E402,F401,F403
from .fieldcore import (  # noqa: E402
    Chart,
    MetricField,
    OneFormField,
    ScalarField,
    VectorField,
    christoffel,
    curl_operator,
    parse_expression,
    parse_field,
    riemannian_grad_hess,
)
from .geodesic import (  # noqa: E402
    GeodesicState,
    Trajectory,
    exp_map,
    integrate,
    rhs_fermat,
    rhs_randers_speed,
    rhs_riemannian_speed,
)
from .metrics import (  # noqa: E402
    RandersStructure,
    eval_F,
    fundamental_tensor,
    indicatrix,
    randers_from_fermat,
    randers_from_generic,
    randers_from_zermelo,
    randers_length,
)
from .shooting import (  # noqa: E402
    EnumerationResult,
    GeodesicSolution,
    ShootingConfig,
    energy_bound,
    enumerate_geodesics,
    finiteness_report,
    finsler_distance,
)
from .spacetime import (  # noqa: E402
    StationarySpacetime,
    count_lightlike_images,
    count_timelike,
    extend_for_proper_time,
    lift_lightlike,
)
from .variation import ConjugacyReport, conjugate_points, jacobi_transport  # noqa: E402
