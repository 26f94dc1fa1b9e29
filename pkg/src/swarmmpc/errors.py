"""Exception types shared across the package."""


class SwarmError(Exception):
    pass


class ProtocolError(SwarmError):
    """A message violated the round protocol (tracker metadata mismatch,
    double-booked communication slot, malformed payload)."""


class DegenerateGeometryError(SwarmError):
    """Two reference positions coincide; no separating plane exists."""


class FatalInvariantError(SwarmError):
    """A run reached a state the safety argument rules out: the trajectory
    program was unsolvable and the shifted previous plan failed verification."""
