"""Certify multilevel coherence of a motional mode coupled to a qubit.

Submodules:

* ``core``: joint qubit-oscillator states, ideal and non-ideal pulses
* ``synthesis``: creation sequences and measurement mappings for a target
* ``certifier``: interference patterns and the moment ratio ``C = M3/M1**2``
* ``thresholds``: numerical suprema of ``C`` over k-coherent states
* ``stats``: bias-corrected estimation of ``C`` from binomial shots
* ``experiment``: simulated runs, detuning sweeps, population probe fits
"""

from .certifier import THRESHOLDS, certifier_value, certify, sample_pattern
from .core import (
    JointDensity,
    JointState,
    PhysicalParams,
    Pulse,
    PulseSequence,
    Transition,
    apply_sequence,
    free_evolution,
    shift_sequence_phases,
)
from .stats import ShotRecord, unbiased_c
from .synthesis import TargetState, build_mapping_spec, optimize_mapping, synthesize_creation

__version__ = "0.1.0"
