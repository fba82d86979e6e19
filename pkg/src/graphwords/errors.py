class GraphWordsError(Exception):
    """Base class for pipeline errors."""


class DataFormatError(GraphWordsError, ValueError):
    """Input data does not match the expected layout."""


class ConfigMismatchError(GraphWordsError):
    """A persisted artifact was produced under a different configuration."""


class MissingArtifactError(GraphWordsError, FileNotFoundError):
    """A stage was run before the stage it depends on."""
