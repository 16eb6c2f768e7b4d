//! Scenario loading, run execution, metrics, and report emission.
