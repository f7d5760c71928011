"""Simulated leader-follower teleoperation with force feedback and imitation learning."""

__version__ = "0.1.0"
