"""Exception hierarchy shared by every stage of the pipeline."""


class VoxtokError(Exception):
    """Base class for all errors raised by voxtok."""


# mesh parsing / normalization

class MalformedRecord(VoxtokError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyMesh(VoxtokError):
    pass


class IndexOutOfRange(VoxtokError):
    pass


class DegenerateExtent(VoxtokError):
    pass


# codec

class EmptyTrainingSet(VoxtokError):
    pass


class UntrainedModel(VoxtokError):
    pass


class IdOutOfRange(VoxtokError):
    pass


class FormatError(VoxtokError):
    """A binary file has the wrong magic, version or size."""


# token framing

class FramingError(VoxtokError):
    def __init__(self, position, message):
        super().__init__(f"position {position}: {message}")
        self.position = position


class MissingSentinel(FramingError):
    pass


class WrongLength(FramingError):
    pass


class OutOfShapeRange(FramingError):
    pass


# corpus

class TemplateCountMismatch(VoxtokError):
    pass


class PlaceholderMismatch(VoxtokError):
    pass


class MissingField(VoxtokError):
    pass


# metrics

class EmptySet(VoxtokError):
    pass
