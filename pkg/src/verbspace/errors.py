"""Exception hierarchy shared by every verbspace module."""


class VerbspaceError(ValueError):
    """Base class for all errors raised by this package."""


class EmptyVotesError(VerbspaceError):
    """A vote record carries no nonzero count."""


class EmptyLabelError(VerbspaceError):
    """A multi-verb label would contain no verb at all."""


class VocabularyMismatchError(VerbspaceError):
    """A verb is not part of the vocabulary, or vocabularies disagree."""


class DimensionMismatchError(VerbspaceError):
    """Array or file dimensions disagree with what was declared."""


class DuplicateIdError(VerbspaceError):
    """The same identifier occurs twice where ids must be unique."""


class MalformedFileError(VerbspaceError):
    """A file does not follow its documented format."""


class MissingVotesError(VerbspaceError):
    """A class has no vote record to build its label from."""


class SchemeMismatchError(VerbspaceError):
    """A labelling scheme is incompatible with the requested loss or operation."""


class NumericError(VerbspaceError):
    """A computation produced a non-finite value."""


class UndefinedMetricError(VerbspaceError):
    """Every query was excluded, so the metric has no value."""


class EmptyCorpusError(VerbspaceError):
    """A retrieval corpus is empty after filtering."""
