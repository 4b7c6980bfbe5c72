"""Exception types shared across the package."""


class VolDiffError(Exception):
    """Base class for all package errors."""


class ShapeError(VolDiffError, ValueError):
    pass


class DomainError(VolDiffError, ValueError):
    pass


class GraphError(VolDiffError, RuntimeError):
    pass


class DegenerateInputError(VolDiffError, ValueError):
    pass


class EmptyInputError(VolDiffError, ValueError):
    pass


class WarmupError(VolDiffError, ValueError):
    pass


class SizeError(VolDiffError, ValueError):
    pass


class ContractError(VolDiffError, ValueError):
    pass


class TrainingDivergenceError(VolDiffError, FloatingPointError):
    def __init__(self, component: str, value: float):
        super().__init__(f"non-finite {component} loss ({value!r})")
        self.component = component
        self.value = value


class SamplingDivergenceError(VolDiffError, FloatingPointError):
    def __init__(self, t: int):
        super().__init__(f"non-finite state in reverse chain at t={t}")
        self.t = t


class AlignmentError(VolDiffError, ValueError):
    def __init__(self, offenders):
        offenders = list(offenders)
        super().__init__(f"dates not aligned between truth and samples: {offenders}")
        self.offenders = offenders


class DegenerateDistributionError(VolDiffError, ValueError):
    pass


class ConfigError(VolDiffError, ValueError):
    pass
