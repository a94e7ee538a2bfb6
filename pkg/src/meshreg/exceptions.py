"""Exception hierarchy shared by all modules."""


class MeshRegError(Exception):
    """Base class for all errors raised by meshreg."""


class MeshError(MeshRegError, ValueError):
    """Invalid mesh input (bad indices, wrong shapes, empty mesh)."""


class DegenerateFaceError(MeshError):
    """A face has (numerically) zero area."""


class NonManifoldError(MeshError):
    """An edge is shared by more than two faces."""


class NotWatertightError(MeshError):
    """A closed surface was required but the mesh has boundary edges."""


class VolumeFormatError(MeshRegError, ValueError):
    """A volume file could not be parsed."""


class ConfigError(MeshRegError, ValueError):
    """Invalid run configuration."""


class DivergenceError(MeshRegError, FloatingPointError):
    """An optimisation produced a non-finite or runaway loss."""

    def __init__(self, step, value):
        super().__init__(f"optimisation diverged (loss {value}) at step {step}")
        self.step = step
        self.value = value
