import os

# Pin BLAS to one thread before numpy loads anywhere: keeps runs single-core
# and keeps reduction order, and therefore metrics bytes, deterministic.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(var, "1")
