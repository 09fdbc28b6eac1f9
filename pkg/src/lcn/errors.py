"""Exception types shared across the package."""


class LcnError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LcnError):
    """Invalid configuration file, parameters, or checkpoint data."""


class LatticeError(ConfigError):
    """Lattice specification cannot be realized (bad sizes, duplicate bonds, ...)."""


class UnsupportedError(LcnError):
    """Requested combination of options is not supported (e.g. special kernel on square)."""


class ShapeError(LcnError):
    """Tensor operands have incompatible shapes."""

    def __init__(self, op: str, *shapes) -> None:
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class DivergenceError(LcnError):
    """Training energy became non-finite; the last good checkpoint is retained."""


class ConvergenceError(LcnError):
    """Iterative eigensolver failed to converge within the iteration budget."""
