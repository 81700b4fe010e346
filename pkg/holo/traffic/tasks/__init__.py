"""Trajectory reconstruction and virtual traffic detection tasks."""

EXTENSION_NAMESPACE = "holo.traffic.tasks"
