"""Exception hierarchy.

Input problems derive from :class:`InputError`, numerical failures from
:class:`NumericalError`; the CLI maps the two families to distinct exit codes.
"""


class StochBTError(Exception):
    pass


class InputError(StochBTError):
    pass


class ParseError(InputError):
    """A system/Gramian file could not be parsed; ``field`` names the culprit."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class ValidationError(InputError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(StochBTError):
    pass


class CapacityError(NumericalError):
    pass


class UnstableSystemError(NumericalError):
    def __init__(self, spectral_abscissa):
        self.spectral_abscissa = spectral_abscissa
        super().__init__(
            f"system is not mean-square asymptotically stable "
            f"(spectral abscissa {spectral_abscissa:.6g})"
        )


class GramianError(NumericalError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class BalancingError(NumericalError):
    pass


class SimulationError(NumericalError):
    pass
