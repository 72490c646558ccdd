"""Exception hierarchy.

Two families, matching the CLI exit codes: ``InputError`` (exit 2) for
requests that are invalid before any heavy compute happens, and
``NumericalError`` (exit 3) for failures detected while computing.
"""


class CarlemanRTEError(Exception):
    exit_code = 1


class InputError(CarlemanRTEError):
    exit_code = 2


class NumericalError(CarlemanRTEError):
    exit_code = 3


class ConfigError(InputError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class TimeTooShort(InputError):
    def __init__(self, T, T_min):
        self.T = T
        self.T_min = T_min
        super().__init__(
            f"horizon T={T:.6g} does not exceed the minimal observation time "
            f"T_min={T_min:.6g}; choose T > {T_min:.6g}"
        )


class PositivityViolated(InputError):
    pass


class DeltaTooLarge(InputError):
    pass


class InadmissibleBeta(InputError):
    pass


class NonPositiveKappa(NumericalError):
    def __init__(self, j, kappa):
        self.j = j
        self.kappa = kappa
        super().__init__(
            f"cell {j}: min of gamma_j.v over the closed cell is {kappa:.6g} <= 0; "
            "refine the angular partition (increase the L counts)"
        )


class CflViolation(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class FieldNotVanishingAtT(NumericalError):
    pass


class LineSearchStalled(NumericalError):
    def __init__(self, message, run=None):
        self.run = run
        super().__init__(message)


class DegenerateEnsemble(NumericalError):
    pass


class BoundViolated(InputError, ValueError):
    """Coefficients negative or above the bound M."""
