"""qmit: density-matrix simulation and training of parameterized quantum
circuits with learnable Pauli noise mitigation."""

__version__ = "0.1.0"

from . import cli, data, losses, noise, pqc, qsim, selftest, train

__all__ = ["cli", "data", "losses", "noise", "pqc", "qsim", "selftest", "train", "__version__"]
