class MmextractError(Exception):
    """Base class for extraction failures."""


class CorpusFormatError(MmextractError):
    pass


class UnreadableImage(MmextractError):
    """An image could not be decoded; extraction aborts to preserve row alignment."""

    def __init__(self, record_id: str, path: str, reason: str):
        self.record_id = record_id
        self.path = path
        super().__init__(f"record {record_id!r}: cannot read image {path!r}: {reason}")


class EncoderLoadFailure(MmextractError):
    pass
