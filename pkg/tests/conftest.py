"""Pin BLAS to one thread before numpy loads: the model's matrices are tiny,
so threading only adds overhead and scheduler nondeterminism."""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
