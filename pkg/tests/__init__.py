"""twinuplift test suite."""
