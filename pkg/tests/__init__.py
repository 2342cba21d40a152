"""Init file for the tests module."""
