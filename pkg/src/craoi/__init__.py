"""Age of Information and energy efficiency of a secondary device on an on/off licensed channel."""

from .params import (
    ChannelActivity,
    OperatingPoint,
    ParameterError,
    RadioConfig,
    SdTraffic,
    effective_noise,
    power_to_time,
    time_to_power,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelActivity",
    "OperatingPoint",
    "ParameterError",
    "RadioConfig",
    "SdTraffic",
    "effective_noise",
    "power_to_time",
    "time_to_power",
    "__version__",
]
