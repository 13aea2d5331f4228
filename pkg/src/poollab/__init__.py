"""poollab: a laboratory for sequence-pooling architectures.

The package contains a minimal reverse-mode autodiff engine over dense
numpy tensors (`gradcore`), six pooling architectures built on top of it
(`archzoo`), deterministic synthetic task generators (`taskgen`), a
single-run trainer (`trainer`), geometric probes (`analysis`), and a sweep
harness with RGB accuracy-grid rendering (`sweep`, `render`, `records`,
`cli`).
"""

__version__ = "0.1.0"


class ConfigError(ValueError):
    """Invalid configuration (bad field value, unknown key, inconsistent dims)."""


from .gradcore import Tape, Tensor  # noqa: E402

__all__ = ["ConfigError", "Tape", "Tensor", "__version__"]
