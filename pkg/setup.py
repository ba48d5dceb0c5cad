import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the pure-NumPy
# implementation when the extension is missing. TEXSYNC_NO_EXT=1 skips the
# build entirely (useful on machines without a C toolchain).
ext_modules = []
if not os.environ.get("TEXSYNC_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "texsync._kernels",
                    ["src/texsync/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # -ffp-contract=off keeps float results bit-identical to
                    # the NumPy fallback (no FMA contraction).
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
