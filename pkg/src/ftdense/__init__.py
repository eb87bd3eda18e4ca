"""Fault-tolerant dense linear algebra kernels."""
from .abft import (ChecksumState, Correction, encode_c_checksums, estimate_abft_overhead, ft_gemm, ft_trsm,
                   verify_interval)
from .dense_core import DEFAULT_CONFIG, KernelConfig, as_matrix, as_vector
from .dmr import FtReport, ft_dot, ft_gemv, ft_nrm2, ft_scal, ft_trsv
from .errors import (ChecksumInconsistent, ConflictingPlan, DetectedButUncorrected, DimensionError, FaultToleranceError,
                     FtDenseError, MultipleErrors, OracleMismatch, SingularMatrixError, Unrecoverable)
from .injector import FaultPlan, InjectionLog, Injector, arm
from .kernels import dot, gemm, gemv, nrm2, scal, trsm, trsv
from .parallel import par_dot, par_ft_gemm, par_gemm, par_gemv, par_nrm2

__version__ = "0.1.0"

__all__ = [
    "ChecksumInconsistent", "ChecksumState", "ConflictingPlan", "Correction", "DEFAULT_CONFIG",
    "DetectedButUncorrected", "DimensionError", "FaultPlan", "FaultToleranceError", "FtDenseError", "FtReport",
    "InjectionLog", "Injector", "KernelConfig", "MultipleErrors", "OracleMismatch", "SingularMatrixError",
    "Unrecoverable", "arm", "as_matrix", "as_vector", "dot", "encode_c_checksums", "estimate_abft_overhead",
    "ft_dot", "ft_gemm", "ft_gemv", "ft_nrm2", "ft_scal", "ft_trsm", "ft_trsv", "gemm", "gemv", "nrm2",
    "par_dot", "par_ft_gemm", "par_gemm", "par_gemv", "par_nrm2", "scal", "trsm", "trsv", "verify_interval",
]
