import pytest

from nstlab import kernels


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Compile every numba kernel once so timed tests measure math, not JIT."""
    kernels.warmup()
