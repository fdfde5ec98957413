"""Configuration module initialization."""
