"""probeinv: reconstruct time-varying control signals from quantum probe measurements."""

from . import units
from .operators import (
    DensityState,
    GeneratorTerm,
    apply_adjoint,
    apply_forward,
    expectation,
    hamiltonian_term,
    lindblad_term,
    on_qubit,
    pauli,
    pure_state,
    tensor,
)
from .signals import (
    Constant,
    DistortedStep,
    MeasurementRecord,
    Multisine,
    PiecewiseConstant,
    ProbeModel,
    Samples,
    SignalTrace,
    Sinusoid,
    SumSignal,
    build_two_qubit_model,
    eval_signal,
)
from .forward import (
    IntegratorConfig,
    NoiseSpec,
    SimulationError,
    closed_state_simulate,
    inject_noise,
    simulate,
)

__version__ = "0.1.0"
