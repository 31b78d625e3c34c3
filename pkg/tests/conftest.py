"""Session-wide test setup.

All per-frame matrices in this suite are small; multithreaded BLAS only adds
contention (and thread-count-dependent float reductions), so pin every pool
to one thread for the whole session.
"""

import threadpoolctl

_LIMITS = threadpoolctl.threadpool_limits(limits=1)
