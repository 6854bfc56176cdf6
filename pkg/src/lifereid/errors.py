"""Exception types raised by the library.

Everything derives from LifereidError so callers can catch broadly.  Most
types also subclass ValueError because they signal bad argument values.
"""


class LifereidError(Exception):
    pass


class ZeroVector(LifereidError, ValueError):
    """Vector norm below the normalization tolerance."""


class IndexOutOfRange(LifereidError, IndexError):
    pass


class EmptyKeySet(LifereidError, ValueError):
    pass


class LengthMismatch(LifereidError, ValueError):
    pass


class DimensionMismatch(LifereidError, ValueError):
    pass


class LayoutMismatch(LifereidError, ValueError):
    """Two parameter vectors with different layer layouts."""


class NonSymmetricInput(LifereidError, ValueError):
    pass


class EmptyCluster(LifereidError, ValueError):
    pass


class NoisyLabelInBatch(LifereidError, ValueError):
    pass


class IdentityWithSingleInstance(LifereidError, ValueError):
    pass


class EmptyPrototypeStore(LifereidError, ValueError):
    pass


class BatchTooSmall(LifereidError, ValueError):
    pass


class BothEmpty(LifereidError, ValueError):
    """Neither new clusters nor buffered entries are available."""


class EmptyBuffer(LifereidError, ValueError):
    pass


class InvalidSpec(LifereidError, ValueError):
    pass


class MalformedRow(LifereidError, ValueError):
    pass


class HeaderMismatch(LifereidError, ValueError):
    pass


class NoClusters(LifereidError, ValueError):
    pass


class EmptyGallery(LifereidError, ValueError):
    pass


class NoValidQueries(LifereidError, ValueError):
    pass


class DomainMismatch(LifereidError, ValueError):
    pass


class NoValidTriplets(LifereidError, ValueError):
    pass


class MissingSnapshot(LifereidError, ValueError):
    """Requested cross-test snapshot file does not exist."""


class InvalidConfig(LifereidError, ValueError):
    pass


class CheckpointError(LifereidError, ValueError):
    """Corrupt or incompatible checkpoint payload."""
