"""Physics model and shared constants."""
