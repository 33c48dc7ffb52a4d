"""Exception types raised across the package."""


class RmpcError(Exception):
    """Base class for all package errors."""


class ValidationError(RmpcError, ValueError):
    """Malformed model data (dimensions, definiteness, set assumptions)."""


class SingularDiagonal(RmpcError):
    def __init__(self, t, cond=None):
        self.t = t
        self.cond = cond
        msg = f"diagonal block at t={t} is singular or ill-conditioned"
        if cond is not None:
            msg += f" (cond={cond:.3g})"
        super().__init__(msg)


class EmptySet(RmpcError):
    """Operation needs a nonempty polytope."""


class Unbounded(RmpcError):
    """Support function is +inf in the requested direction."""


class Unsupported(RmpcError):
    """Operation not implemented for the requested dimension."""


class NotConverged(RmpcError):
    def __init__(self, k, what="iteration"):
        self.k = k
        super().__init__(f"{what} did not converge after {k} iterations")


class EmptyInvariantSet(RmpcError):
    def __init__(self, k):
        self.k = k
        super().__init__(f"invariant-set iterate became empty at iteration {k}")


class NotContractive(RmpcError):
    def __init__(self, rho):
        self.rho = rho
        super().__init__(f"closed-loop spectral radius {rho:.6g} >= 1")


class EmptyTightenedSet(RmpcError):
    def __init__(self, which):
        self.which = which
        super().__init__(f"tightened {which} set is empty")


class NoConvergence(NotConverged):
    """Riccati iteration failed to converge."""


class NumericalError(RmpcError):
    """QP backend broke down (factorization failure, non-finite data)."""


class MidRunInfeasible(RmpcError):
    def __init__(self, step, status):
        self.step = step
        self.status = status
        super().__init__(f"OCP infeasible at step {step} (status {status})")
