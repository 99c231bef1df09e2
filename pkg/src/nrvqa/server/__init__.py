"""HTTP service for running controlled subjective rating sessions."""
