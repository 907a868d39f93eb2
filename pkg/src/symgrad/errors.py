"""Exception taxonomy for the engine.

The CLI maps these onto exit codes: config problems exit with 2, backend
problems with 3, dataset problems with 4.
"""


class EngineError(Exception):
    """Base class for every error raised by this package."""


# --- config / symbolic-weight errors (exit code 2) -------------------------


class ConfigError(EngineError):
    pass


class MalformedDocument(ConfigError):
    """The on-disk document is not even parseable."""


class SchemaViolation(ConfigError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class InvariantViolation(SchemaViolation):
    """A constructed config value breaks a structural invariant."""


class IllegalAction(ConfigError):
    """Applying this mutation would leave the config invalid."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class UnbalancedBraces(ConfigError):
    """Template text with broken `{}` slot syntax."""


class MissingVariable(ConfigError):
    def __init__(self, name: str):
        super().__init__(f"missing template variable: {name}")
        self.name = name


class MissingSlot(ConfigError):
    """A prompt builder was not given everything its template needs."""


# --- backend errors (exit code 3) -------------------------------------------


class BackendError(EngineError):
    retryable = False


class TransportError(BackendError):
    retryable = True


class RateLimited(BackendError):
    retryable = True


class ScriptExhausted(BackendError):
    """A scripted backend ran out of queued responses."""


class ScriptMismatch(BackendError):
    def __init__(self, expected: str, got: str):
        super().__init__(f"scripted entry expected {expected}, got {got}")
        self.expected = expected
        self.got = got


# --- pipeline execution ------------------------------------------------------


class ForwardError(EngineError):
    pass


class RoleLoopExceeded(ForwardError):
    def __init__(self, node: str):
        super().__init__(f"node {node!r} hit its role-turn limit")
        self.node = node


class UnknownRoleFromRouter(ForwardError):
    def __init__(self, text: str):
        super().__init__(f"router named unknown role: {text!r}")
        self.text = text


class MalformedToolBlock(ForwardError):
    """A tool-call block was opened but never closed."""


# --- judge / gradient response parsing ---------------------------------------


class LossParseError(EngineError):
    pass


class MissingScoreTag(LossParseError):
    pass


class MissingSuggestionTag(LossParseError):
    pass


class NonIntegerScore(LossParseError):
    pass


class ScoreOutOfRange(LossParseError):
    pass


class GradientParseError(EngineError):
    pass


class MissingBlock(GradientParseError):
    def __init__(self, kind: str):
        super().__init__(f"gradient reply is missing its {kind} block")
        self.kind = kind


class AmbiguousBlocks(GradientParseError):
    """Opened but unclosed tags make the block count undecidable."""


class GradientParseFailure(EngineError):
    """Gradient for a node stayed unparseable after the re-ask."""

    def __init__(self, node: str):
        super().__init__(f"could not parse gradient for node {node!r}")
        self.node = node


# --- optimizer replies --------------------------------------------------------


class UnparseableResult(EngineError):
    """An optimizer reply's <result> block is not a usable action list."""


class MixedNodes(EngineError):
    """A gradient batch mixed gradients from different nodes or levels."""


# --- datasets (exit code 4) ---------------------------------------------------


class DataError(EngineError):
    pass


class MalformedLine(DataError):
    def __init__(self, lineno: int, reason: str = ""):
        detail = f": {reason}" if reason else ""
        super().__init__(f"malformed dataset record on line {lineno}{detail}")
        self.lineno = lineno


class DuplicateId(DataError):
    def __init__(self, example_id: str):
        super().__init__(f"duplicate example id: {example_id!r}")
        self.example_id = example_id


class MissingGroundTruth(DataError):
    pass
