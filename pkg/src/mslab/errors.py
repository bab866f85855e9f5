"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class LabelError(ValueError):
    """A class label or token id is outside the valid range."""


class DegenerateBatchError(ValueError):
    """Every position in a batch is masked out; no loss is defined."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class DivergenceError(RuntimeError):
    """A loss became non-finite during optimization.

    Carries enough context to report where training blew up and, for
    meta-training, the records collected so far.
    """

    def __init__(self, message, step=None, episode_id=None, records=None, params=None):
        super().__init__(message)
        self.step = step
        self.episode_id = episode_id
        self.records = records if records is not None else []
        self.params = params
