"""Shared test fixtures: deterministic skeleton/window/session builders."""

from __future__ import annotations

import numpy as np
import pytest

from adlsense.skeleton import NUM_JOINTS, SampleWindow, SkeletonFrame


def rest_pose() -> np.ndarray:
    """A plausible standing skeleton, joints spread in x/y, ~2m from camera."""
    rng = np.random.default_rng(12345)
    pose = np.zeros((NUM_JOINTS, 3))
    pose[:, 0] = np.linspace(-0.4, 0.4, NUM_JOINTS)
    pose[:, 1] = np.linspace(0.2, 1.8, NUM_JOINTS)
    pose[:, 2] = 2.0 + 0.1 * rng.standard_normal(NUM_JOINTS)
    return pose


def make_frame(t: float, joints: np.ndarray, **kwargs) -> SkeletonFrame:
    return SkeletonFrame(timestamp=t, joints=joints, **kwargs)


def make_window(
    joint_tracks: np.ndarray, t0: float = 0.0, dt: float = 0.2, window_index: int = 0
) -> SampleWindow:
    """Build a window from a (T, 19, 3) position tensor."""
    frames = tuple(
        make_frame(t0 + i * dt, joint_tracks[i]) for i in range(joint_tracks.shape[0])
    )
    return SampleWindow(frames=frames, window_index=window_index)


def stationary_window(n_frames: int = 16) -> SampleWindow:
    return make_window(np.tile(rest_pose(), (n_frames, 1, 1)))


def moving_window(
    seed: int = 0, n_frames: int = 16, scale: float = 0.05
) -> SampleWindow:
    """Random-walk motion on top of the rest pose; deterministic per seed."""
    rng = np.random.default_rng(seed)
    steps = scale * rng.standard_normal((n_frames, NUM_JOINTS, 3))
    steps[0] = 0.0
    tracks = rest_pose()[None] + np.cumsum(steps, axis=0)
    return make_window(tracks)


def oscillating_frames(
    n_frames: int,
    fps: float = 30.0,
    amplitude: float = 0.15,
    moving_joints: tuple[int, ...] = (7, 8, 11, 12),
    seed: int = 0,
    phase: float = 0.0,
):
    """Session-like frame list: a few joints oscillate, the rest hold still."""
    rng = np.random.default_rng(seed)
    base = rest_pose() + 0.02 * rng.standard_normal((NUM_JOINTS, 3))
    frames = []
    for i in range(n_frames):
        t = i / fps
        joints = base.copy()
        wobble = amplitude * np.sin(2.0 * np.pi * 1.5 * t + phase)
        for j in moving_joints:
            joints[j, 0] += wobble
            joints[j, 1] += 0.5 * amplitude * np.cos(2.0 * np.pi * 1.1 * t + phase)
        frames.append(make_frame(t, joints))
    return frames


@pytest.fixture
def tmp_session(tmp_path):
    """Factory writing an oscillating session file; returns its path."""
    from adlsense.skeleton import save_session

    def _write(name="session.jsonl", n_frames=200, **kwargs):
        path = tmp_path / name
        save_session(oscillating_frames(n_frames, **kwargs), path)
        return path

    return _write
