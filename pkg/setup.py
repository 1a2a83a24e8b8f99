"""Builds the optional compiled conv kernels; the package works without them."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("AMRL_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "amrl.tensor._ckernels",
                    ["src/amrl/tensor/_ckernels.pyx"],
                    include_dirs=[np.get_include(), "src/amrl/tensor"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
