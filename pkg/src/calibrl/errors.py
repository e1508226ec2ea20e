class CalibRLError(Exception):
    pass


class InvalidActionError(CalibRLError, ValueError):
    pass


class InsufficientDataError(CalibRLError):
    pass


class UnobservableMotionError(CalibRLError):
    pass


class EpisodeFinishedError(CalibRLError):
    pass


class TrainingDivergenceError(CalibRLError):
    pass


class ConfigError(CalibRLError, ValueError):
    """Invalid run configuration; ``key_path`` names the offending entry."""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path
