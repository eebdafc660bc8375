"""Exception hierarchy shared by the solver, the sensitivity model and the CLI."""

from __future__ import annotations


class HybridSCError(Exception):
    """Base class for every error raised by this package."""

    category = "error"


class StructuralError(HybridSCError, ValueError):
    """Network data references something that does not exist."""

    category = "structure"


class ContractError(HybridSCError, ValueError):
    """A caller violated a documented precondition."""

    category = "contract"


class InvalidGrid(HybridSCError):
    category = "invalid-grid"

    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(f"{v.code}: {v.message}" for v in self.violations)
        super().__init__(f"grid failed validation ({text})")


class GridFileError(HybridSCError):
    category = "file"


class NonConvergence(HybridSCError):
    category = "non-convergence"

    def __init__(self, iterations: int, final_norm: float, spec=None):
        self.iterations = iterations
        self.final_norm = final_norm
        self.spec = spec
        msg = f"power flow did not converge after {iterations} iterations (|r|inf={final_norm:.3e})"
        if spec is not None:
            msg += f" while perturbing {spec}"
        super().__init__(msg)


class SingularJacobian(HybridSCError):
    category = "singular"

    def __init__(self, iteration: int, condition_estimate: float = 0.0):
        self.iteration = iteration
        self.condition_estimate = condition_estimate
        super().__init__(
            f"power-flow Jacobian is singular at iteration {iteration} (rcond={condition_estimate:.3e})"
        )


class SingularA(HybridSCError):
    category = "singular"

    def __init__(self, condition_estimate: float):
        self.condition_estimate = condition_estimate
        super().__init__(
            f"sensitivity matrix is singular (rcond={condition_estimate:.3e}); "
            "the operating point is degenerate"
        )


class ZeroVoltageMagnitude(HybridSCError):
    category = "zero-voltage"

    def __init__(self, node: str):
        self.node = node
        super().__init__(f"voltage magnitude is zero at node {node}")
