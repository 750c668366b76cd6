# Backend package
"""
Errors shared by the metamarl engines
"""


class MetaMarlError(Exception):
    """Base class for every error raised by metamarl"""


class TapeError(MetaMarlError):
    """Malformed tape usage (foreign nodes, bad gradient requests)"""


class TapeDomainError(TapeError):
    """A primitive was evaluated outside its domain"""


class GameError(MetaMarlError):
    """Invalid game construction, action or state"""


class PolicyError(MetaMarlError):
    """Invalid policy parameters, persona kinds or population splits"""


class LearningError(MetaMarlError):
    """Rollout or inner-loop misuse"""


class MetaTrainingError(MetaMarlError):
    """Outer-loop failure such as a non-finite meta-gradient"""


class OpponentModelError(MetaMarlError):
    """Opponent modeling received unusable data"""


class OracleSizeError(MetaMarlError):
    """Exact enumeration requested beyond the size guard"""


class ConfigError(MetaMarlError):
    """Experiment configuration could not be parsed or resolved"""


class CheckpointError(MetaMarlError):
    """Checkpoint file is malformed or belongs to another configuration"""


class RunFailure(MetaMarlError):
    """A parallel job failed; partial results travel with the error"""

    def __init__(self, message: str, partial_results=None):
        super().__init__(message)
        self.partial_results = list(partial_results or [])
