"""Dense numerical kernels used by projection and training."""

from crossadapt.kernels.linalg import (
    EigenResult,
    Matrix,
    as_matrix,
    gaussian_matrix,
    qr_decompose,
    sym_eig,
)

__all__ = [
    "EigenResult",
    "Matrix",
    "as_matrix",
    "gaussian_matrix",
    "qr_decompose",
    "sym_eig",
]
