"""CLI module for SFMIPA."""
