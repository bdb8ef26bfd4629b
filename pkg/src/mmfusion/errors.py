"""Package-level exception types for input and training failures."""


class InputError(ValueError):
    """A caller-supplied input violates an operation's precondition."""


class PlanError(ValueError):
    """An experiment plan or configuration fails validation."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered during training."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
