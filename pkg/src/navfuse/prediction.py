from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from navfuse.scene import Pose2D, Waypoint, from_agent_frame, wrap_angle

NUM_MODES = 6


@dataclass(frozen=True, eq=False)
class PredictionOutput:
    """Joint multi-modal prediction for one scene.

    ``trajectories`` is ``(K, A, T, 3)`` with ``x, y, heading`` in each focal
    agent's own frame (``frames[a]``). ``confidences`` holds one softmax
    distribution over the K joint modes for the whole scene.
    """

    trajectories: np.ndarray
    confidences: np.ndarray
    agent_ids: tuple[str, ...]
    frames: tuple[Pose2D, ...]

    def __post_init__(self):
        traj = np.asarray(self.trajectories, dtype=np.float64)
        conf = np.asarray(self.confidences, dtype=np.float64).reshape(-1)
        if traj.ndim != 4 or traj.shape[-1] != 3:
            raise ValueError(f"trajectories must be (K, A, T, 3), got {traj.shape}")
        if conf.shape[0] != traj.shape[0]:
            raise ValueError("one confidence per mode required")
        if traj.shape[1] != len(self.agent_ids) or len(self.frames) != len(self.agent_ids):
            raise ValueError("agent_ids / frames do not match trajectories")
        object.__setattr__(self, "trajectories", traj)
        object.__setattr__(self, "confidences", conf)
        object.__setattr__(self, "agent_ids", tuple(self.agent_ids))
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def num_modes(self) -> int:
        return self.trajectories.shape[0]

    @property
    def most_probable_mode(self) -> int:
        return int(np.argmax(self.confidences))

    def agent_index(self, agent_id: str) -> int:
        return self.agent_ids.index(agent_id)

    def global_trajectories(self) -> np.ndarray:
        out = np.empty_like(self.trajectories)
        for a, f in enumerate(self.frames):
            out[:, a, :, :2] = from_agent_frame(self.trajectories[:, a, :, :2], f)
            out[:, a, :, 2] = wrap_angle(self.trajectories[:, a, :, 2] + f.heading)
        return out

    def waypoints(self, mode: int, agent: int, global_frame: bool = True) -> list[Waypoint]:
        traj = self.global_trajectories() if global_frame else self.trajectories
        return [Waypoint(x, y, h, t) for t, (x, y, h) in enumerate(traj[mode, agent])]
