"""Exception hierarchy shared by all shrouddb modules."""


class ShroudError(Exception):
    """Base class for all shrouddb errors."""


class ParameterError(ShroudError, ValueError):
    """An argument violates a documented precondition."""


class DataError(ShroudError, ValueError):
    """Input data is malformed (duplicate IDs, out-of-domain keys, ...)."""


class QueryError(ShroudError, ValueError):
    """A query is malformed or outside the configured domain."""


class BudgetError(ShroudError):
    """Registering an attribute would exceed the total privacy budget."""


class CryptoError(ShroudError):
    """Base class for encryption/decryption failures."""


class SizeError(CryptoError, ValueError):
    """Plaintext exceeds the configured block payload size."""


class FormatError(CryptoError, ValueError):
    """Ciphertext bytes are too short or otherwise unparseable."""


class AuthenticationError(CryptoError):
    """Ciphertext failed tag verification (wrong key or corruption)."""


class StorageError(ShroudError):
    """Base class for key-value storage failures."""


class KeyNotFoundError(StorageError, KeyError):
    """GET on a key that was never PUT."""

    def __init__(self, key: bytes):
        super().__init__(key)
        self.key = key


class BatchError(StorageError):
    """A batch operation failed; ``missing`` lists the offending keys."""

    def __init__(self, message: str, missing: list[bytes] | None = None):
        super().__init__(message)
        self.missing = missing or []


class StorageClosedError(StorageError):
    """Operation on a closed handle or dropped connection."""


class StorageNotEmptyError(StorageError):
    """ORAM initialisation over storage that already holds buckets."""


class AddressError(ShroudError, ValueError):
    """ORAM access outside [0, capacity)."""


class StashOverflowError(ShroudError):
    """Client stash exceeded its configured limit; the run must abort."""


class CapacityError(ShroudError):
    """A partition holds more records than its ORAM can store."""


class RunError(ShroudError):
    """Benchmark experiment could not be set up or executed."""
