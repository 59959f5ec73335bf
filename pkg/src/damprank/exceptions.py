"""Exception hierarchy.

The CLI maps these onto exit codes: :class:`UsageError` and
:class:`DomainError` exit 1, :class:`DataError` exits 2 and
:class:`NumericalError` exits 3.
"""


class DampRankError(Exception):
    """Base class for all package errors."""


class UsageError(DampRankError, ValueError):
    pass


class DomainError(UsageError):
    """A damping parameter (or kernel shape) lies outside its valid domain."""


class DataError(DampRankError, ValueError):
    pass


class GraphFormatError(DataError):
    pass


class DanglingNodeError(DataError):
    def __init__(self, nodes):
        self.nodes = list(nodes)
        shown = ", ".join(str(x) for x in self.nodes[:10])
        more = "" if len(self.nodes) <= 10 else f" (+{len(self.nodes) - 10} more)"
        super().__init__(
            f"{len(self.nodes)} dangling node(s) with no out-links: {shown}{more}"
        )


class OrderingMismatchError(DataError):
    pass


class NumericalError(DampRankError, ArithmeticError):
    pass


class StepCapError(NumericalError):
    """The series truncation index would exceed the configured step cap."""


class ConvergenceError(NumericalError):
    pass


class ConvergenceWarning(UserWarning):
    pass
