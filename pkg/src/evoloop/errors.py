"""Exception types shared across the pipeline."""


class EvoloopError(Exception):
    """Base class for all pipeline errors."""


class FeedbackParseError(EvoloopError):
    """Feedback text could not be parsed; distinct from 'parsed but not qualified'."""


class MissingJudgment(FeedbackParseError):
    pass


class AmbiguousJudgment(FeedbackParseError):
    pass


class MissingRating(FeedbackParseError):
    pass


class InvalidRating(FeedbackParseError):
    pass


class NoAnswerFound(FeedbackParseError):
    pass


class NoInstructionsFound(FeedbackParseError):
    pass


class MissingVerdict(FeedbackParseError):
    """Pairwise-judge completion carries no recognizable verdict marker."""


class RejectedRecord(EvoloopError):
    """An unqualified record was offered for training-example assembly."""


class CorruptDataset(EvoloopError):
    """Stored dataset content does not match its manifest hash."""


class EmptyRound(EvoloopError):
    """A self-evolution round produced zero qualified records."""


class EndpointUnavailable(EvoloopError):
    """Remote endpoint kept failing after the retry budget was spent."""


class ContextOverflow(EvoloopError):
    """Prompt exceeds the endpoint's context limit."""


class UnknownPrompt(EvoloopError):
    """Prompt is not in a finite chain model's support."""


class SupportMismatch(EvoloopError):
    pass


class AbsoluteContinuityViolation(EvoloopError):
    """Target distribution is zero somewhere the source has mass."""


class DegenerateQuality(EvoloopError):
    """Quality is zero on the chain distribution's support, so log-quality diverges."""


class InsufficientYield(EvoloopError):
    """Prompt expansion exhausted its attempt budget far below target."""


class TrainerFailed(EvoloopError):
    """The external trainer exited nonzero or produced no manifest."""


class ConfigError(EvoloopError):
    """Run configuration failed validation; message lists every violated field."""
