"""Pin BLAS to one thread before numpy loads so timed tests measure
single-core work and results stay deterministic across machines."""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")
