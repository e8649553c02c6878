"""Subcommand handlers for twinuplift."""

# This file intentionally left minimal to avoid circular imports
# Subcommand registration is done in main.py
