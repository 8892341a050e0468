class MaaeError(Exception):
    """Base class for every error raised by the library."""


class ConfigurationError(MaaeError):
    pass


class GeometryError(MaaeError):
    """A layer stack cannot produce (or cover) the requested geometry."""


class DatasetError(MaaeError):
    pass


class CalibrationError(MaaeError):
    pass


class ObjectiveError(MaaeError):
    """Invalid inputs handed to a loss term."""


class NonFiniteLossError(MaaeError):

    def __init__(self, term, value):
        self.term = term
        self.value = value
        super().__init__(f"Non-finite value {value} in loss term '{term}'")


class CheckpointError(MaaeError):
    pass


class ShapeError(MaaeError):
    """A tensor does not have the shape the network was configured for."""
