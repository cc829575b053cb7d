"""Modal decomposition of feedback delay networks.

Typical use::

    from fdnmodal import FDNSystem, solve, residues, verification_error
    from fdnmodal.analysis import random_orthogonal

    sys = FDNSystem([233, 311, 457, 599], random_orthogonal(4, seed=1))
    poles, stats = solve(sys)
    dec = residues(sys, poles)
    assert verification_error(sys, dec) < 1e-10
"""
from .attenuation import (AttenuationSpec, MagnitudeBounds, OnePoleFilter, design_filters,
                          gamma_from_t60, homogeneous_filters, magnitude_bounds, mode_t60,
                          t60_from_gamma)
from .eai import (Deflation, EAIConfig, EAIStats, GateRecorder, PoleSet, PoleStatus, Scheme,
                  solve)
from .fdn import FDNSystem, eval_loop, impulse_response, transfer_function
from .modal import (ModalDecomposition, Mode, NonSimplePoleError, residues, synthesize,
                    verification_error)

__version__ = "0.1.0"
