"""Jitter transfer between ring oscillators: models, simulation, measurement and recovery."""

from .distributions import (InverseGaussianParams, NigParams, NormalParams, PointMass, ig_pdf, ig_sample,
                            log_mgf_ig, log_mgf_nig, nig_cdf, nig_of_pair, nig_pdf)
from .errors import DegenerateDistributionError, DomainError, EstimationFailedError
from .measurement import MeasurementRecord, estimate_from_phases, estimate_ratio, estimate_total_jitter, measure_stream
from .oscillator import AccumulatedVolatility, OscillatorParams, accumulate, clock_cycle_law, edge_time_law
from .recovery import (FrequencyRatios, VolatilitySolution, explicit_inverse, recover_method1,
                       recover_method1_all, recover_method2_3osc, recover_method2_general)
from .simulator import BitStream, SimulationConfig, simulate_pair, simulate_topology
from .transfer import TransferredJitter, transfer_accumulated, transfer_period, transfer_phase, transfer_time

__version__ = "0.1.0"
