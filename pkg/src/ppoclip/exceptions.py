class UsageError(ValueError):
    """Raised when an API is called with arguments that violate its contract."""


class TrainingError(RuntimeError):
    """Raised when training produces non-finite values.

    ``context`` carries whatever diagnostics the raising site had at hand
    (minibatch index, rollout step, offending quantity).
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context
