"""Monte-Carlo coherent backscattering of light by moving resonant scatterers."""

__version__ = "0.1.0"

from .analytics import (
    CoherenceBudget,
    coherence_scales,
    contrast_decay,
    critical_order,
    mc_cross_check,
    mesoscopic_bound,
)
from .config import ConfigError, RunConfig, SweepSpec, load_config
from .geometry import MediumGeometry, Ray
from .transport import (
    ContrastEstimate,
    PhotonPathRecord,
    ScatteringEvent,
    TransportEngine,
    angular_profile,
    contrast_per_order,
    direct_amplitude,
    enhancement_factor,
    frequency_walk_stats,
    generate_path,
    path_interference,
    reverse_amplitude,
)
from .velocity import VelocityDistribution

__all__ = [
    "CoherenceBudget",
    "ConfigError",
    "ContrastEstimate",
    "MediumGeometry",
    "PhotonPathRecord",
    "Ray",
    "RunConfig",
    "ScatteringEvent",
    "SweepSpec",
    "TransportEngine",
    "VelocityDistribution",
    "angular_profile",
    "coherence_scales",
    "contrast_decay",
    "contrast_per_order",
    "critical_order",
    "direct_amplitude",
    "enhancement_factor",
    "frequency_walk_stats",
    "generate_path",
    "load_config",
    "mc_cross_check",
    "mesoscopic_bound",
    "path_interference",
    "reverse_amplitude",
]
