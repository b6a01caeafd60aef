"""Exception types shared across the library."""


class TripartyError(ValueError):
    """Base class for all library-specific errors."""


class BadParams(TripartyError):
    """Constructor parameters violate the documented constraints."""


class BadRange(TripartyError):
    """An integer range [s:ell] is empty or inverted."""


class OutOfSupport(TripartyError):
    """A point lies outside the support of the distribution."""


class ZeroDensity(TripartyError):
    """The density vanishes at an interior point where it is needed."""


class SaturatedCdf(TripartyError):
    """The CDF equals one, so hazard-rate quantities are undefined."""


class UnboundedSupport(TripartyError):
    """An optimisation over an unbounded support did not attain its maximum
    below the configured search cap."""


class NotRegular(TripartyError):
    """The distribution failed the (numerical) regularity classification."""


class CostOutOfSupport(TripartyError):
    """A reported or sampled cost lies outside the agent's cost support."""


class AssumptionViolated(TripartyError):
    """An operation requiring ex-ante identical agents was called on a
    heterogeneous instance."""


class MissingTau(TripartyError):
    """A per-n pricing ratio is required but absent from the data table."""


class NonConvergence(TripartyError):
    """A numerical search failed to converge within its iteration budget."""
