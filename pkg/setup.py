"""Build script for the optional compiled FCM kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed Cython build only costs speed, not functionality.
"""

from setuptools import Extension, setup

extensions = []
try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "phenofcm._fcm_core",
                ["src/phenofcm/_fcm_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=extensions)
