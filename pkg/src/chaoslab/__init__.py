"""chaoslab."""
