from .study import ConflictError, StudyDefinition, StudyQuery, SurveyError, SurveyStore, create_study
from .service import create_app

__all__ = [
    "ConflictError",
    "StudyDefinition",
    "StudyQuery",
    "SurveyError",
    "SurveyStore",
    "create_app",
    "create_study",
]
