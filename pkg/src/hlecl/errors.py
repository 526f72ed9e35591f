"""Exception hierarchy shared by all hlecl modules."""


class HleError(Exception):
    """Base class for every error raised by hlecl."""


# taxonomy
class TaxonomyError(HleError, ValueError):
    pass


class CycleDetected(TaxonomyError):
    pass


class CrossLevelParent(TaxonomyError):
    pass


class DuplicateLabel(TaxonomyError):
    pass


class EmptyLevel(TaxonomyError):
    pass


class LevelOutOfRange(TaxonomyError):
    pass


class NoSuchLabel(TaxonomyError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# datasets
class DatasetError(HleError, ValueError):
    pass


class InvalidSpread(DatasetError):
    pass


class ZeroSamples(DatasetError):
    pass


class ParseError(HleError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownLabel(DatasetError):
    pass


class DimMismatch(DatasetError):
    pass


class FractionOutOfRange(DatasetError):
    pass


# streams
class StreamError(HleError, ValueError):
    pass


class NotTwoLevels(StreamError):
    pass


class TooManyTasks(StreamError):
    pass


class InsufficientSamples(StreamError):
    pass


# learner
class LearnerError(HleError):
    pass


class BadShape(LearnerError, ValueError):
    pass


class NoClassesAtLevel(LearnerError, LookupError):
    pass


class AlreadyRegistered(LearnerError, ValueError):
    pass


class UnregisteredClass(LearnerError, LookupError):
    pass


class NaNGradient(LearnerError, FloatingPointError):
    pass


class CheckpointError(LearnerError, ValueError):
    pass


# memory / sampling
class EmptyMemory(HleError, LookupError):
    pass


class EmptyBatch(HleError, ValueError):
    pass


class UnseenClass(HleError, LookupError):
    pass


# orchestration / cli
class ConfigError(HleError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigParseError(ConfigError, ParseError):
    def __init__(self, message, line=None):
        ConfigError.__init__(self, message, line)
        self.line = line


class UnknownKey(ConfigError):
    pass


class MissingKey(ConfigError):
    pass


class RangeError(ConfigError):
    pass


class UnsweepableKey(ConfigError):
    pass


class RunError(HleError, RuntimeError):
    """A module error raised inside the online loop, annotated with position."""

    def __init__(self, message, t=None, task=None):
        self.t = t
        self.task = task
        super().__init__(f"{message} (t={t}, task={task})")
