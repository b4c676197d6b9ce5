"""Exception hierarchy shared across the solver pipeline.

Each class carries the process exit code the CLI maps it to.
"""


class SolverError(Exception):
    exit_code = 1


class ConfigError(SolverError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class SingularOperatorError(SolverError):
    """A direct factorization met an (almost) singular operator."""

    exit_code = 3


class NearResonanceError(SingularOperatorError):
    """k^2 is numerically indistinguishable from a Dirichlet eigenvalue."""

    def __init__(self, k, eigenvalue):
        self.k = k
        self.eigenvalue = eigenvalue
        super().__init__(
            "k^2 = %.17g collides with the Dirichlet eigenvalue %.17g of the "
            "diffusion pencil; the continuous problem is near-resonant and the "
            "stability constant is unbounded" % (k * k, eigenvalue)
        )


class EigensolveError(SolverError):
    """A local generalized eigensolve failed or produced invalid output."""

    exit_code = 4


class ModeCapError(EigensolveError):
    """Mode selection asked for more local eigenvectors than the cap allows."""

    def __init__(self, subdomain, requested, cap):
        self.subdomain = subdomain
        self.requested = requested
        self.cap = cap
        super().__init__(
            "coarse subdomain %d selects %d modes, above the per-subdomain cap "
            "%d; raise the cap or lower the eigenvalue threshold"
            % (subdomain, requested, cap)
        )


class NoConvergenceError(SolverError):
    """GMRES hit the iteration cap before reaching the tolerance."""

    exit_code = 5
