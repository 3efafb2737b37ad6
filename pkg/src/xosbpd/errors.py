"""Exception and warning types shared across the package."""


class XosbpdError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class EmptyDomain(XosbpdError):
    category = "geometry"


class ParseError(XosbpdError):
    category = "input"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidMeasure(XosbpdError):
    category = "input"


class EmptyFamily(XosbpdError):
    category = "kernel"


class SingularSystem(XosbpdError):
    category = "kernel"

    def __init__(self, message, min_pivot=0.0):
        super().__init__(message)
        self.min_pivot = min_pivot


class DegenerateBond(XosbpdError):
    category = "mechanics"


class NumericalBlowup(XosbpdError):
    category = "solver"

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class NotConverged(XosbpdError):
    category = "solver"

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class ValidationError(XosbpdError):
    """Config validation failure; carries every violation found."""

    category = "config"

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class UnknownPreset(XosbpdError):
    category = "config"


class IsolatedNode(UserWarning):
    """A node ended up with no bonds; it is treated as force-free."""

    def __init__(self, node_ids):
        self.node_ids = list(node_ids)
        super().__init__(f"{len(self.node_ids)} isolated node(s): {self.node_ids[:10]}")


class KernelFallback(UserWarning):
    pass
