"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A hyperparameter is out of range or inconsistent with the data."""


class DataError(ValueError):
    """A dataset file or container is malformed or missing."""


class TrainingDiverged(ArithmeticError):
    """The loss became non-finite during training."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch, self.batch = epoch, batch
        msg = f"non-finite loss at epoch {epoch}, batch {batch}"
        super().__init__(f"{msg}: {detail}" if detail else msg)
