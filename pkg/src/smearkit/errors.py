"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """Structurally invalid input: bad dimensions, out-of-range fields, malformed records."""


class ScorerContractError(RuntimeError):
    """A pluggable quality scorer returned a value outside [0, 1]."""

    def __init__(self, tile, value):
        self.tile = tile
        self.value = value
        super().__init__(f"scorer returned {value!r} outside [0, 1] for tile {tile}")


class MappingMissError(KeyError):
    """A (dataset, raw_label) pair has no entry in the label normalization table."""

    def __init__(self, dataset, raw_label):
        self.dataset = dataset
        self.raw_label = raw_label
        super().__init__(f"no label mapping for ({dataset!r}, {raw_label!r})")


class ConfigError(ValueError):
    """Invalid run or generation configuration."""


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; earlier stages' outputs are left on disk."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


class TrainingDiverged(RuntimeError):
    """A training phase produced a non-finite loss; carries the trace up to the failure."""

    def __init__(self, step, trace):
        self.step = step
        self.trace = trace
        super().__init__(f"non-finite loss at step {step}")
