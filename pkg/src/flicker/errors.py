"""Exception hierarchy shared across the package."""


class FlickerError(Exception):
    """Base class for all errors raised by this package."""


# homomorphic encryption

class HeError(FlickerError):
    pass


class ParameterError(HeError):
    """No valid parameter set could be generated."""


class EncodingOverflow(HeError):
    """Scaled values do not fit in the active modulus."""


class LevelMismatch(HeError):
    pass


class ScaleMismatch(HeError):
    pass


class DepthExhausted(HeError):
    """A multiplication was requested on a ciphertext with no level left."""


class MissingGaloisKey(HeError):
    pass


class LayoutError(HeError):
    """Slot layout requirements (power-of-two width, capacity) are violated."""


class SerializationError(HeError):
    pass


# metrics

class UndefinedMetric(FlickerError, ValueError):
    """Ratio metric requested for an all-zero or empty vector."""


# protocol

class ProtocolError(FlickerError):
    pass


class AggregationIntegrityError(ProtocolError):
    """Decrypted counts are not close enough to integers (or are negative)."""


class ProtocolViolation(ProtocolError):
    """A party's claim disagrees with what the server decrypted."""


class NoCandidateError(ProtocolError):
    """Every client is excluded from dominant-client localization."""


# resampling

class CannotAugment(FlickerError):
    """Minority class is empty so there is nothing to augment from."""


class ConfigError(FlickerError, ValueError):
    pass
