"""Shipped robot description fixtures."""

from importlib import resources


def a1_like_path() -> str:
    """Filesystem path of the 12-revolute-joint quadruped description."""
    return str(resources.files(__package__) / "a1_like.urdf")


def a1_like_text() -> str:
    return (resources.files(__package__) / "a1_like.urdf").read_text()
