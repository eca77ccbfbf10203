"""Exception types shared across the toolkit.

Everything derives from IotprintError so the CLI can map library errors
to exit codes in one place. Usage-level errors (bad device name, scheme
not applicable) are distinguished from I/O and format errors.
"""


class IotprintError(Exception):
    """Base class for all errors raised by this package."""


# pcap parsing

class MalformedGlobalHeader(IotprintError):
    """The input is not a classic pcap file we can read."""


class TruncatedRecordHeader(IotprintError):
    """The pcap file ends in the middle of a record."""


# payload / IDX handling

class EmptyPayload(IotprintError):
    """fix_length was called on an empty payload; empties must be filtered first."""


class IdxFormatError(IotprintError):
    """Base class for IDX container problems."""


class BadMagic(IdxFormatError):
    pass


class DimensionMismatch(IdxFormatError):
    pass


class CountMismatch(IdxFormatError):
    pass


# dataset construction

class EmptyCorpus(IotprintError):
    """No devices survived filtering, or the corpus directory is empty."""


class UnknownDevice(IotprintError):
    """A target/excluded device name is not an IoT device in the corpus."""


class DegenerateLabels(IotprintError):
    """The requested labeling scheme yields fewer than two usable classes."""


class SchemeNotSupported(IotprintError):
    """The operation does not apply to this labeling scheme."""


# model / training

class ShapeMismatch(IotprintError):
    pass


class EmptyTrainingSet(IotprintError):
    pass


class BadModelMagic(IotprintError):
    """The model file does not start with the expected container magic."""


class ModelVersionMismatch(IotprintError):
    pass


# evaluation

class LabelOutOfRange(IotprintError):
    pass


class EmptyPool(IotprintError):
    """Threshold calibration needs both known and unknown instances."""


# pipeline plumbing

class IoFailure(IotprintError):
    pass


class ManifestMismatch(IotprintError):
    """A manifest hash check failed; an intermediate file was altered."""


#: errors caused by how the tool was invoked rather than by the data
USAGE_ERRORS = (UnknownDevice, SchemeNotSupported, DegenerateLabels)
