"""Geodesic flows on images and unitaries, with an equilibrium-propagation bridge.

The package splits into three strands sharing one periodic-grid substrate:

- diffeomorphic image registration (time-varying velocities, geodesic
  shooting from an initial momentum, stationary velocity fields),
- equilibrium propagation over explicit energy models, including a wrapper
  that runs the shooting data term through the two-phase estimator,
- right-invariant penalty metrics on qubit unitary groups (geodesics,
  distances, sectional-curvature censuses).
"""

from .config import ExperimentConfig, parse_config, render_config
from .ep import (
    AdjointSolution,
    EnergyModel,
    EpConfig,
    EpUpdate,
    EpUpdateSymmetric,
    QuadraticTeacherModel,
    RelaxResult,
    ScalarToyModel,
    ShootingMatchModel,
    ep_cost,
    ep_update,
    ep_update_symmetric,
    exact_gradient,
    relax,
    shooting_as_ep,
    validate_model,
)
from .errors import (
    BlowUpError,
    ConfigError,
    DegenerateFixedPointError,
    DomainError,
    GeoflowError,
    GridMismatchError,
    RelaxationError,
)
from .estimators import LDDMMRegistration, ShootingRegistration, SVFRegistration
from .flow import TimeVaryingVelocity, integrate_flow, svf_exp
from .grid import (
    Grid,
    ScalarField,
    Transform,
    VectorField,
    compose,
    divergence,
    gradient,
    identity_transform,
    interpolate,
    jacobian_determinant,
    l2_inner,
    l2_norm,
    warp,
)
from .io import read_gfld, read_pgm, write_csv, write_gfld, write_pgm
from .kernel import KernelSpec, MomentumField, apply_K, apply_K_inverse, v_inner
from .lddmm import (
    LddmmProblem,
    LddmmResult,
    LddmmTrajectory,
    lddmm_energy,
    lddmm_gradient,
    lddmm_trajectory,
    register_lddmm,
)
from .seeding import rng_for
from .shooting import (
    ShootingMatchResult,
    ShootingState,
    adjoint_advect,
    data_cost,
    flow_transform,
    match_by_shooting,
    momentum_from_velocity,
    shoot,
    shooting_gradient,
)
from .suite import blob_pair, gaussian_blob, run_suite
from .svf import SvfResult, register_svf, svf_energy, svf_energy_terms, svf_gradient
from .unitary import (
    CensusResult,
    DistanceResult,
    EulerArnoldPath,
    PauliHamiltonian,
    PenaltyMetric,
    UnitaryPoint,
    bracket,
    curvature_census,
    euler_arnold_shoot,
    geodesic_distance,
    metric_inner,
    pauli_labels,
    pauli_weights,
    phase_aligned_gap,
    sectional_curvature,
)

__version__ = "0.1.0"
