"""Exception types shared across the package."""


class FigforgeError(Exception):
    """Base class for all package errors."""


# --- scene ---------------------------------------------------------------

class SceneError(FigforgeError):
    pass


class DuplicateIdError(SceneError):
    pass


class InvalidElementError(SceneError):
    pass


class MalformedXmlError(SceneError):
    pass


class EmptyCanvasError(SceneError):
    pass


# --- middleware templates / repository -----------------------------------

class TemplateError(FigforgeError):
    pass


class UnknownParameterError(TemplateError):
    pass


class ConstraintViolationError(TemplateError):
    pass


class ExpressionError(TemplateError):
    pass


class BodyValidationError(TemplateError):
    """Raised when a middleware body fails static validation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class RepositoryError(FigforgeError):
    pass


class UnknownMiddlewareError(RepositoryError):
    pass


class ScoreRangeError(RepositoryError):
    pass


class VersionMismatchError(RepositoryError):
    pass


class CorruptFileError(RepositoryError):
    pass


# --- retrieval ------------------------------------------------------------

class RetrievalError(FigforgeError):
    pass


class DimensionMismatchError(RetrievalError):
    pass


class UnknownThemeError(RetrievalError):
    pass


# --- backends / agents ------------------------------------------------------

class BackendError(FigforgeError):
    """A chat or embedding backend failed to produce a usable response."""


class ScriptedBackendMiss(BackendError):
    """The scripted backend has no recorded response for a request hash."""


class SchemaInvalidError(BackendError):
    """Backend output failed schema validation after the retry budget."""


class InvalidInvocationError(BackendError):
    """The drawer named a middleware or parameter outside its contract."""


class NoElementsForConceptError(FigforgeError):
    pass


# --- search / evolution / pipeline -----------------------------------------

class SearchError(FigforgeError):
    pass


class ExpansionFailureError(SearchError):
    pass


class ChoiceExhaustedError(SearchError):
    """A drawer has no further distinct choices for a node (scripted use)."""


class EvolutionError(FigforgeError):
    pass


class ProposalInvalidError(EvolutionError):
    """A mutation/crossover proposal failed validation; repository unchanged."""


class ObjectiveFailureError(EvolutionError):
    pass


class PipelineError(FigforgeError):
    pass
