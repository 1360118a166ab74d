"""Exception taxonomy shared across the pipeline.

The CLI maps these onto exit codes: configuration 2, dependency 3, numeric 4.
"""


class ConfigError(ValueError):
    """A configuration file or flag violates the schema or an invariant."""


class DependencyError(RuntimeError):
    """A required upstream artifact (checkpoint, corpus) is missing."""


class TrainingError(RuntimeError):
    """Training finished without reaching its contract (floor or finiteness)."""
