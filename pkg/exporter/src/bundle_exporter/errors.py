class ExporterError(Exception):
    exit_code = 1


class ModelLoadError(ExporterError):
    """A pretrained encoder backend could not be loaded."""

    exit_code = 2


class ImageDecodeError(ExporterError):
    """An input image could not be read or decoded."""

    exit_code = 3


class TemplateMismatch(ExporterError):
    """A dataset's prompt-template set is not the expected five."""

    exit_code = 2


class DatasetUnknown(ExporterError):
    exit_code = 2
