"""
homeofit command harness
========================

Adapters under ``tools/adapters`` registered and dispatched by
``harness.run_harness``. Importing the package applies the thread limits of
``HOMEOFIT_THREADS`` before the numerical stack loads.
"""
from harness import config  # noqa: F401
