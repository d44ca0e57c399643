"""Exception types shared across the package."""


class AdaptMIError(Exception):
    """Base class for every package-specific error."""


class ParseError(AdaptMIError):
    """A corpus file line could not be parsed."""


class ValidationError(AdaptMIError):
    """An input violated a documented precondition or invariant."""


class ReplyError(AdaptMIError):
    """A model reply could not be interpreted; keeps the raw reply around."""

    def __init__(self, message: str, raw_reply: str | None = None):
        super().__init__(message)
        self.raw_reply = raw_reply


class AnnotationError(ReplyError):
    """Skill annotation produced no usable skill tag."""


class JudgmentError(ReplyError):
    """The judge reply carried no parseable correct/incorrect verdict."""


class FeedbackError(ReplyError):
    """The feedback reply carried no hint tag."""


class TransportError(AdaptMIError):
    """A backend request failed after exhausting retries."""


class ProtocolError(AdaptMIError):
    """A backend response violated the wire contract."""
