"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class MaskError(ValueError):
    """A softmax row has no unmasked entry to normalize over."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DegenerateAttentionError(ValueError):
    """An attention-weight row has zero norm over the unmasked frames."""


class ConfigError(ValueError):
    """A configuration file failed validation."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
