"""Integration tests for twinuplift."""
