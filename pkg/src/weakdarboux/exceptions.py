"""Exception types shared by the numerical modules and the CLI."""


class InputError(ValueError):
    """Malformed or inconsistent input (shapes, levels, file contents)."""


class DegeneracyError(ArithmeticError):
    """A form failed the invertibility margin.

    The failing location is kept on the instance so callers (and the CLI
    report) can say where the path broke down.
    """

    def __init__(self, message, *, t=None, x=None, s=None, sigma_min=None):
        super().__init__(message)
        self.t = t
        self.x = None if x is None else [float(v) for v in x]
        self.s = s
        self.sigma_min = sigma_min

    def to_dict(self):
        return {"error": "degeneracy", "message": str(self), "t": self.t,
                "x": self.x, "s": self.s, "sigma_min": self.sigma_min}


class DomainError(ArithmeticError):
    """A point or trajectory left the region where the construction is valid."""

    def __init__(self, message, *, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = None if x is None else [float(v) for v in x]

    def to_dict(self):
        return {"error": "domain", "message": str(self), "t": self.t, "x": self.x}
