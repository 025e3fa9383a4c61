"""Exception hierarchy shared across the pipeline."""


class MathforgeError(Exception):
    """Base class for all pipeline errors."""


class SchemaError(MathforgeError):
    """A parsed payload violates its declared schema."""


class InvariantError(MathforgeError):
    """A record violates a structural invariant."""


class EmptyInput(MathforgeError):
    """An aggregate operation received no data."""


class ConfigError(MathforgeError):
    """Run configuration is missing, unreadable, or invalid."""


class IoError(MathforgeError):
    """A run-directory artifact could not be read or written."""


# --- gateway ---

class TransportError(MathforgeError):
    """HTTP transport failed after all retries."""


class AuthError(MathforgeError):
    """The endpoint rejected our credentials."""


class ReplayMiss(MathforgeError):
    """Replay mode found no recorded response for a request digest."""


class ContentFiltered(MathforgeError):
    """The endpoint refused to complete the request."""


class ReplayDivergence(MathforgeError):
    """A replayed run produced artifacts differing from the original."""


# --- sandbox supervision ---

class SandboxError(MathforgeError):
    """Base class for sandbox supervision failures."""


class SpawnError(SandboxError):
    """An executor process failed to start."""


class ExecutorDead(SandboxError):
    """The executor process exited while a call was in flight."""


class DeadlineExceeded(SandboxError):
    """The supervisor-side deadline elapsed without a response."""


class ProtocolViolation(SandboxError):
    """The executor sent a frame that violates the wire protocol."""


# --- agents / judging ---

class MalformedFinalAnswer(MathforgeError):
    """A final-answer marker was found but its payload failed to parse."""


class JudgeSchemaError(MathforgeError):
    """The judge returned malformed JSON even after a re-prompt."""
