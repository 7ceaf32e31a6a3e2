"""Build script: compiles the optional accelerated kernel extension.

The extension is strictly optional; rankclap falls back to the pure-Python
kernels in rankclap._kernels_py when rankclap._accel is absent.  Install
without a compiler (or without Cython) and everything still works.

    python setup.py build_ext --inplace    # build the fast kernels in a checkout
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "rankclap._accel",
                ["src/rankclap/_accel.pyx"],
                include_dirs=[np.get_include()],
                # -fno-builtin-sin/cos: stop the compiler fusing the Box-Muller
                # sin/cos pair into sincos(), which rounds differently from the
                # separate libm calls the pure-Python fallback makes
                extra_compile_args=["-O3", "-fno-builtin-sin", "-fno-builtin-cos"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
