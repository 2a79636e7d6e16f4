"""Exception taxonomy shared by all modules."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """Invalid construction parameters (grids, run configs)."""


class ShapeError(ValueError):
    """Fields on mismatched grids, or sample-length mismatch."""


class StencilError(ValueError):
    """Too few nodes for the finite-difference stencils."""


class ResolutionError(ValueError):
    """Grid too coarse to resolve a concentration scale."""


class ContractError(ValueError):
    """A caller-side precondition (e.g. 'project first') was violated."""


class UnsupportedConditionError(ValueError):
    """Geometric condition requested outside its stated dimension range."""


class NumericalError(RuntimeError):
    """Linear-solve or eigensolve failure, with diagnostics in the message."""


class ProjectionError(RuntimeError):
    """Fibering projection infeasible for the requested branch.

    Carries the margin E(t0) - lambda*||u||_q^q when applicable.
    """

    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin
