"""Incident fields, Green's operators, forward solver, Mie oracle and noise."""

from .channel import (
    Dataset,
    FrequencyChannel,
    build_channel,
    build_channels,
    generate_synthetic,
    simulate_scattered,
)
from .forward import ForwardSolveError, forward_solve, scattered_at_receivers, state_residual
from .layout import ArrayLayout, circular_layout, synthetic_ring_layout
from .mie import MieConvergenceError, mie_cylinder_scattered
from .noise import add_noise, add_noise_traces, empirical_snr_db
from .operators import (
    SpectralKernel,
    apply_domain_adjoint,
    apply_domain_operator,
    build_spectral_kernel,
    data_operator,
    domain_operator_dense,
    green,
    incident_fields,
    self_term,
)
