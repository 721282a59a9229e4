"""Wireless control co-design: plants closed over a fading, packet-dropping link,
with resource allocation and control policies trained by constrained actor-critic."""

__version__ = "0.1.0"

from wcsrl.dynamics import PlantModel, CostWeights
from wcsrl.environment import WirelessControlEnv, SystemState, Observation, JointAction, ConstraintSpec
from wcsrl.wireless import ChannelModel

__all__ = [
    "PlantModel",
    "CostWeights",
    "ChannelModel",
    "WirelessControlEnv",
    "SystemState",
    "Observation",
    "JointAction",
    "ConstraintSpec",
    "__version__",
]
