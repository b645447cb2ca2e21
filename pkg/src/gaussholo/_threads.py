import numba

# the TBB build shipped in some environments is too old for numba
try:
    import numba.np.ufunc.omppool  # noqa: F401

    numba.config.THREADING_LAYER = "omp"
except ImportError:
    numba.config.THREADING_LAYER = "workqueue"


def configure_threading(threads: int | None) -> int:
    """Set the kernel thread count (bounded by NUMBA_NUM_THREADS); returns the count in use."""
    if threads is not None:
        if threads < 1:
            raise ValueError("threads must be >= 1")
        if threads > numba.config.NUMBA_NUM_THREADS:
            raise ValueError(
                f"{threads} threads requested but only {numba.config.NUMBA_NUM_THREADS} available; "
                "set NUMBA_NUM_THREADS before starting the process"
            )
        numba.set_num_threads(threads)
    return numba.get_num_threads()
