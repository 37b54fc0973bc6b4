"""Pin BLAS threads before numpy loads so timing and results are stable."""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, os.environ.get("BIGC_THREADS", "1"))
