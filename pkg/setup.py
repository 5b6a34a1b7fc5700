import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mppfv._core",
                sources=["src/mppfv/_core.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level="3",
    )
except ImportError:
    # The package still works without the extension: mppfv.kernels falls
    # back to the numpy implementations at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
