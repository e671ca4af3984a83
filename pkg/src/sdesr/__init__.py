"""Score-based SDE super-resolution at desk scale."""

from sdesr.sde import MarginalMoments, NoiseSchedule, SdeKind, SdeModel

__all__ = ["MarginalMoments", "NoiseSchedule", "SdeKind", "SdeModel"]
__version__ = "0.1.0"
