"""Service layer: data, simulation, training, ensemble, importance and pipeline orchestration."""
