from .commons import (
    ACTIONS,
    CHANNELS,
    N_ACTIONS,
    N_CHANNELS,
    TIMEOUT_STEPS,
    AgentState,
    EnvError,
    EventLog,
    GridState,
    MapSpec,
    builtin_map,
    global_codes,
    is_timeout_observation,
    mask_others,
    observation_indices,
    one_hot,
    render_observation,
    reset,
    resolve_map,
    respawn_probability,
    step,
    timeout_observation,
)
from .kernels import BACKEND

__all__ = [
    "ACTIONS",
    "BACKEND",
    "CHANNELS",
    "N_ACTIONS",
    "N_CHANNELS",
    "TIMEOUT_STEPS",
    "AgentState",
    "EnvError",
    "EventLog",
    "GridState",
    "MapSpec",
    "builtin_map",
    "global_codes",
    "is_timeout_observation",
    "mask_others",
    "observation_indices",
    "one_hot",
    "render_observation",
    "reset",
    "resolve_map",
    "respawn_probability",
    "step",
    "timeout_observation",
]
