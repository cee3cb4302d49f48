"""In-silico microvascular phantom: geometry, hydraulics, scene, imaging."""
