# nfar/errors.py


class NfarError(Exception):
    """Base class for every error raised by the toolkit."""


class ShapeError(NfarError, ValueError):
    """Grid sizes or array shapes do not line up."""


class EmbeddingError(NfarError):
    """The wrapped kernel has eigenvalues that are negative beyond roundoff."""


class GridTooLargeError(NfarError, ValueError):
    """A dense S^2 x S^2 operator was requested on a grid that is too fine."""


class NonFiniteOutputError(NfarError, ArithmeticError):
    """A network or operator produced NaN or infinity."""


class SimulationOverflowError(NfarError, ArithmeticError):
    def __init__(self, timestep: int, max_abs: float):
        self.timestep = timestep
        self.max_abs = max_abs
        super().__init__(f"Simulation diverged at timestep {timestep} (max |Z| = {max_abs:.3g}).")


class TrainingAbortedError(NfarError, ArithmeticError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Non-finite loss {loss} at epoch {epoch}, batch {batch}.")


class ReplicationError(NfarError):
    def __init__(self, b: int, T: int, cause: Exception):
        self.b = b
        self.T = T
        self.cause = cause
        super().__init__(f"Replication b={b}, T={T} failed: {cause}")
