"""Unit and acceptance tests for terrain-nav."""
