"""Command-line interface initialization."""
