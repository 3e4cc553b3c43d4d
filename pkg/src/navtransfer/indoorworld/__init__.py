"""Procedural two-domain indoor navigation environment."""

from .env import (
    MAX_STEPS,
    N_ACTIONS,
    Action,
    AgentPose,
    EpisodeSpec,
    Observation,
    VecEnv,
    goal_distance,
    goal_id,
    in_goal_room,
    observe_many,
    random_pose,
    sample_episode,
    shortest_path_length,
    step,
)
from .house import (
    CELL,
    DOMAINS,
    ROOM_INDEX,
    ROOM_TYPES,
    HousePlan,
    Room,
    canonical_domain,
    check_house,
    generate_house,
    load_houses,
    save_houses,
)
from .images import load_images, sample_images, save_images
from .render import IMG, render, render_batch

__all__ = [
    "MAX_STEPS", "N_ACTIONS", "Action", "AgentPose", "EpisodeSpec", "Observation", "VecEnv",
    "goal_distance", "goal_id", "in_goal_room", "observe_many", "random_pose", "sample_episode",
    "shortest_path_length", "step",
    "CELL", "DOMAINS", "ROOM_INDEX", "ROOM_TYPES", "HousePlan", "Room", "canonical_domain",
    "check_house", "generate_house", "load_houses", "save_houses",
    "load_images", "sample_images", "save_images", "IMG", "render", "render_batch",
]
