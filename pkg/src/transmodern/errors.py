"""
Contains module-specific custom errors.
"""
import typing
from dataclasses import dataclass, field


class TransmodernError(Exception):
    """
    Base exception class for this package.
    """


def _shorten(value: typing.Any, max_len: int = 50) -> str:
    text = str(value)
    if len(text) > max_len:
        text = f"{text[:max_len]}..."
    return text


# --- config ---


class ConfigError(TransmodernError):
    """
    Base exception for config loading.
    """


@dataclass
class ConfigErrorMissingKey(ConfigError):
    """
    Exception for when the config file is missing a required key.
    """

    key: str
    cls: type
    annotated_type: type

    def __post_init__(self) -> None:
        """
        Automatically fills in the names of annotated type and cls for printing from __str__.
        """
        self._annotated_type = getattr(self.annotated_type, "__name__", str(self.annotated_type))
        self._cls = self.cls.__name__

    def __str__(self) -> str:
        """
        Custom error message based on dataclass values and calculated actual type.
        """
        return (
            f"Config key '{self.key}' (type `{self._annotated_type}`) "
            f"of class `{self._cls}` was not found in the config, "
            f"but is required as a default value is not specified."
        )


@dataclass
class ConfigErrorInvalidType(ConfigError):
    """
    Exception for when the config file contains a key with an unexpected type.
    """

    key: str
    value: typing.Any
    expected_type: type

    def __post_init__(self) -> None:
        """
        Store the actual type of the config variable.
        """
        self.actual_type = type(self.value)
        self._value = _shorten(self.value)

    def __str__(self) -> str:
        """
        Custom error message based on dataclass values and calculated actual type.
        """
        return (
            f"Config key '{self.key}' had a value (`{self._value}`) with a type (`{self.actual_type}`) "
            f"that was not expected: `{self.expected_type}` is the required type."
        )


@dataclass
class ConfigErrorInvalidValue(ConfigError):
    """
    Exception for a well-typed config value that breaks an invariant.
    """

    key: str
    value: typing.Any
    reason: str

    def __str__(self) -> str:
        """
        Name the key, the offending value and the broken rule.
        """
        return f"Config key '{self.key}' has invalid value `{_shorten(self.value)}`: {self.reason}."


# --- numerics ---


class NumericsError(TransmodernError):
    """
    Base exception for tensor operations.
    """


@dataclass
class InvalidAxisError(NumericsError):
    """
    Raised when an axis does not exist for a tensor's shape.
    """

    axis: int
    ndim: int

    def __str__(self) -> str:
        """
        Mention both the axis and the rank.
        """
        return f"Axis {self.axis} is invalid for a tensor of rank {self.ndim}."


@dataclass
class EmptyAxisError(NumericsError):
    """
    Raised when an operation needs a non-empty last axis.
    """

    operation: str

    def __str__(self) -> str:
        """
        Mention the operation.
        """
        return f"`{self.operation}` needs a non-empty last axis."


@dataclass
class NonFiniteValueError(NumericsError):
    """
    Raised when a gradient check meets NaN or infinity.
    """

    parameter: str
    where: str

    def __str__(self) -> str:
        """
        Identify the parameter that produced the non-finite value.
        """
        return f"Non-finite {self.where} encountered for parameter '{self.parameter}'."


# --- tokenizer ---


class TokenizerError(TransmodernError):
    """
    Base exception for tokenizer training and use.
    """


@dataclass
class VocabularyTooSmallError(TokenizerError):
    """
    Raised when the requested vocabulary cannot hold the alphabet and the special tokens.
    """

    requested: int
    minimum: int

    def __str__(self) -> str:
        """
        Mention the minimum usable size.
        """
        return f"Vocabulary size {self.requested} is smaller than alphabet + special tokens ({self.minimum})."


@dataclass
class EmptyCorpusError(TransmodernError):
    """
    Raised when a corpus has nothing to work with.
    """

    what: str

    def __str__(self) -> str:
        """
        Mention which corpus was empty.
        """
        return f"The {self.what} is empty."


@dataclass
class TokenIdOutOfRangeError(TokenizerError):
    """
    Raised when a token id is not part of the vocabulary.
    """

    token_id: int
    vocab_size: int

    def __str__(self) -> str:
        """
        Mention the id and the valid range.
        """
        return f"Token id {self.token_id} is outside the vocabulary range [0, {self.vocab_size})."


@dataclass
class TokenizerFormatError(TokenizerError):
    """
    Raised when a tokenizer document cannot be read back.
    """

    path: str
    reason: str

    def __str__(self) -> str:
        """
        Mention the file and what is wrong with it.
        """
        return f"Tokenizer file '{self.path}' is malformed: {self.reason}."


# --- alignment ---


class AlignmentError(TransmodernError):
    """
    Base exception for statistical alignment.
    """


@dataclass
class VocabularyMismatchError(AlignmentError):
    """
    Raised when a tokenizer does not cover its side of the parallel corpus.
    """

    side: str
    unknown_rate: float
    max_unknown_rate: float

    def __str__(self) -> str:
        """
        Mention the side and how much of it was unknown.
        """
        return (
            f"The {self.side} tokenizer does not match the {self.side} side of the corpus: "
            f"{self.unknown_rate:.1%} unknown tokens (allowed: {self.max_unknown_rate:.1%})."
        )


@dataclass
class TsvFormatError(TransmodernError):
    """
    Raised when a TSV data file has a malformed line.
    """

    path: str
    line_no: int
    reason: str

    def __str__(self) -> str:
        """
        Mention the file and the line.
        """
        return f"{self.path}:{self.line_no}: {self.reason}."


# --- transtokenizer ---


class TransTokenizationError(TransmodernError):
    """
    Base exception for embedding initialization.
    """


@dataclass
class FallbackTokenMissingError(TransTokenizationError):
    """
    Raised when a fallback mapping points to a source token the source vocabulary lacks.
    """

    target_token: str
    source_token: str

    def __str__(self) -> str:
        """
        Mention the mapping entry.
        """
        return (
            f"Fallback entry '{self.target_token}' -> '{self.source_token}' "
            f"maps to a token missing from the source vocabulary."
        )


@dataclass
class SourceIdOutOfRangeError(TransTokenizationError):
    """
    Raised when an alignment or fallback refers to a row the source matrix does not have.
    """

    source_id: int
    rows: int

    def __str__(self) -> str:
        """
        Mention the id and the matrix size.
        """
        return f"Source token id {self.source_id} exceeds the source embedding matrix ({self.rows} rows)."


@dataclass
class EmbeddingFormatError(TransTokenizationError):
    """
    Raised when an embedding file cannot be decoded.
    """

    path: str
    reason: str

    def __str__(self) -> str:
        """
        Mention the file and what is wrong with it.
        """
        return f"Embedding file '{self.path}' is malformed: {self.reason}."


# --- encoder ---


class EncoderError(TransmodernError):
    """
    Base exception for the encoder model.
    """


@dataclass
class ShapeMismatchError(EncoderError):
    """
    Raised when a tensor does not have the shape the model expects.
    """

    what: str
    expected: tuple[int, ...]
    actual: tuple[int, ...]

    def __str__(self) -> str:
        """
        Mention both shapes.
        """
        return f"{self.what} has shape {self.actual}, expected {self.expected}."


@dataclass
class SequenceTooLongError(EncoderError):
    """
    Raised when a sequence exceeds the model's maximum context.
    """

    length: int
    max_context: int

    def __str__(self) -> str:
        """
        Mention the length and the limit.
        """
        return f"Sequence of {self.length} tokens exceeds the maximum context of {self.max_context}."


@dataclass
class CheckpointFormatError(EncoderError):
    """
    Raised when a model container cannot be decoded.
    """

    path: str
    reason: str

    def __str__(self) -> str:
        """
        Mention the file and what is wrong with it.
        """
        return f"Checkpoint '{self.path}' is malformed: {self.reason}."


# --- training ---


class TrainingError(TransmodernError):
    """
    Base exception for pretraining.
    """


@dataclass
class NonFiniteLossError(TrainingError):
    """
    Raised when the training loss stops being a finite number.
    """

    step: int
    stage: int
    loss: float

    def __str__(self) -> str:
        """
        Name the step that diverged.
        """
        return f"Non-finite loss ({self.loss}) at step {self.step} of stage {self.stage}."


@dataclass
class NoMaskedPositionsError(TrainingError):
    """
    Raised when a loss is requested over a batch without any labelled position.
    """

    positions: int

    def __str__(self) -> str:
        """
        Mention how many positions were inspected.
        """
        return f"None of the {self.positions} positions carries a label."


# --- evaluation ---


class EvaluationError(TransmodernError):
    """
    Base exception for the evaluation harness.
    """


@dataclass
class NoRelevantDocumentError(EvaluationError):
    """
    Raised when a retrieval query has no relevant document.
    """

    query_id: str

    def __str__(self) -> str:
        """
        Mention the query.
        """
        return f"Query '{self.query_id}' has no relevant document among the indexed documents."


@dataclass
class UnknownLabelError(EvaluationError):
    """
    Raised when evaluation data uses a label the head was not trained on.
    """

    label: str
    known: list[str] = field(default_factory=list)

    def __str__(self) -> str:
        """
        Mention the label and the known label set.
        """
        return f"Label '{self.label}' was not seen during fine-tuning (known: {', '.join(self.known)})."


@dataclass
class MetricRangeError(EvaluationError):
    """
    Raised when a report would contain a metric outside its declared range.
    """

    metric: str
    value: float

    def __str__(self) -> str:
        """
        Mention the metric and its value.
        """
        return f"Metric '{self.metric}' has out-of-range value {self.value}."


# --- pipeline ---


class PipelineError(TransmodernError):
    """
    Base exception for end-to-end commands.
    """


@dataclass
class MissingPathError(PipelineError):
    """
    Raised before any stage runs when referenced input files do not exist.
    """

    paths: list[str]

    def __str__(self) -> str:
        """
        List every missing path.
        """
        return f"Missing input path(s): {', '.join(self.paths)}."


@dataclass
class StageError(PipelineError):
    """
    Wraps any failure inside a named pipeline stage.
    """

    stage: str
    cause: BaseException

    def __str__(self) -> str:
        """
        Name the stage first, then the original failure.
        """
        return f"stage '{self.stage}' failed: {self.cause}"
