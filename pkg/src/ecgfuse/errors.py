"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's shape rule."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " and ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class AxisError(ValueError):
    pass


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DeterminismError(RuntimeError):
    pass


class DesignError(ValueError):
    """Filter design parameters are invalid or produced an unusable filter."""


class TooShortError(ValueError):
    pass


class MissingLeadError(KeyError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"leads not present in record: {', '.join(self.missing)}")

    def __str__(self):
        return self.args[0]


class DuplicateLeadError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite or exploding loss."""

    def __init__(self, step, components):
        self.step = step
        self.components = dict(components)
        parts = ", ".join(f"{k}={v!r}" for k, v in self.components.items())
        super().__init__(f"loss diverged at step {step}: {parts}")


class DataError(ValueError):
    pass


class BundleError(DataError):
    """Base class for signal-bundle file problems."""


class ManifestError(BundleError):
    pass


class TruncatedPayloadError(BundleError):
    pass


class VersionMismatchError(BundleError):
    pass


class BundleInvariantError(BundleError):
    pass


class ConfigError(ValueError):
    pass
