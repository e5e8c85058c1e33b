"""Tests for the river path-planning simulator."""
