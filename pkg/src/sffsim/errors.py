"""Exception hierarchy shared across the package."""


class SffError(Exception):
    """Base class for every error raised by sffsim."""


class ValidationError(SffError, ValueError):
    """An input violated a documented precondition."""


class WindowOverflowError(ValidationError):
    """A claimed-set envelope does not fit inside the requested grid window."""

    def __init__(self, message, needed_extent=None):
        super().__init__(message)
        self.needed_extent = needed_extent


class ActorNotFoundError(SffError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "actor not found"


class RoutingError(SffError):
    """No route could be assigned or followed."""


class SpawnError(SffError):
    """The map cannot host the requested number of vehicles."""

    def __init__(self, message, required_length=None):
        super().__init__(message)
        self.required_length = required_length


class TrainingError(SffError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
