"""Decode-once evaluation harness: log container, shared frame bus, presets, plugin protocol, scheduling, scoring and leaderboard."""

__version__ = "0.1.0"
