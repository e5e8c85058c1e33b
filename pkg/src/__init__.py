"""Shadow-aware UAV river inspection path planning package."""
