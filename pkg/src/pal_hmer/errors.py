"""Exception types shared across the package."""


class PalError(Exception):
    pass


class DimensionError(PalError, ValueError):
    pass


class ContractError(PalError, ValueError):
    pass


class TapeStateError(PalError, RuntimeError):
    pass


class ConfigError(PalError, ValueError):
    pass


class DataError(PalError):
    """Anything wrong with input data; the CLI maps it to exit code 2."""


class InkMLParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class UnknownTokenError(DataError, KeyError):
    def __init__(self, tokens, label=None):
        self.tokens = list(tokens)
        self.label = label
        super().__init__(f"unknown token(s) {self.tokens!r}" + (f" in label {label!r}" if label is not None else ""))

    def __str__(self):
        return self.args[0]


class UnsupportedTokenError(DataError, KeyError):
    def __init__(self, token):
        self.token = token
        super().__init__(f"no glyph for token {token!r}")

    def __str__(self):
        return self.args[0]


class NumericalError(PalError, ArithmeticError):
    def __init__(self, term, iteration=None):
        self.term = term
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite value in {term}{where}")
