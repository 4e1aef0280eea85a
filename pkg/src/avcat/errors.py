"""Exception hierarchy shared by every avcat module."""


class AvcatError(Exception):
    """Base class for all errors raised by avcat."""


class ContractError(AvcatError, ValueError):
    """An operation was called outside its documented preconditions."""


class ParseError(AvcatError, ValueError):
    """Malformed system file or expression. Carries a 1-based line/column."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class SpecError(AvcatError, ValueError):
    """A parsed system violates a structural invariant (dimensions, period...)."""


class DivergenceError(AvcatError, ArithmeticError):
    """Integration left the admissible region or exhausted its step budget."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class NoGuidingSystemError(AvcatError):
    """Every averaged function up to the available order vanishes on the grid."""


class ShortcutNotApplicable(AvcatError):
    """The closed-form averaged-function shortcut does not cover this order."""


class RingDivisionError(AvcatError, ZeroDivisionError):
    """Division by an element whose constant (value) part is exactly zero."""
