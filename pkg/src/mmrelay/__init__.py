"""Multi-pair two-way full-duplex AF massive-MIMO relaying: bounds, Monte-Carlo and EE power allocation."""

from .sysmodel import ConfigError, PowerAllocation, SystemConfig, paper_config
from .relay import MRC, ZF
from .rates import bound_coeffs, snr_lower, spectral_efficiency, energy_efficiency
from .gpopt import dinkelbach_ee, maxmin_ee, maximize_se, equal_power_outcome, QoSInfeasibleError

__all__ = ["ConfigError", "PowerAllocation", "SystemConfig", "paper_config", "MRC", "ZF",
           "bound_coeffs", "snr_lower", "spectral_efficiency", "energy_efficiency",
           "dinkelbach_ee", "maxmin_ee", "maximize_se", "equal_power_outcome", "QoSInfeasibleError"]
__version__ = "0.1.0"
