"""Build the optional compiled kernels; the package falls back to numpy if this fails."""
import os

from setuptools import setup

ext_modules = []
PYX = "src/coopbound/_ckernels.pyx"
if os.environ.get("COOPBOUND_NO_EXT", "") != "1" and os.path.exists(PYX):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("coopbound._ckernels",
                       sources=[PYX],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
