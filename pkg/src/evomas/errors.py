class ShapeError(ValueError):
    """Array dimensions do not line up."""


class DegenerateVectorError(ValueError):
    """A zero-norm vector reached cosine scoring."""


class CapacityError(ValueError):
    """An exhaustive computation was asked to run past its size guard."""


class StateError(RuntimeError):
    """An operation was applied to a task state that cannot accept it."""
