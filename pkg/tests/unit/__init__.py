"""Unit tests for twinuplift."""
