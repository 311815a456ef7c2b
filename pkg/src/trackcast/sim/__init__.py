"""World simulation: maps, path planning, and episode generation."""

from .episodes import (
    BEHAVIORS,
    EpisodeConfig,
    EpisodeRecord,
    generate_dataset,
    generate_episode,
    generate_single_target_episode,
)
from .maps import MapSpec, generate_map
from .pathfinding import HAVE_COMPILED, a_star_path, astar_cells, path_length

__all__ = [
    "BEHAVIORS",
    "EpisodeConfig",
    "EpisodeRecord",
    "HAVE_COMPILED",
    "MapSpec",
    "a_star_path",
    "astar_cells",
    "generate_dataset",
    "generate_episode",
    "generate_map",
    "generate_single_target_episode",
    "path_length",
]
