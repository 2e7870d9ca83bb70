import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("FEDLQR_PURE_PY"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "fedlqr._rollout",
                    ["src/fedlqr/_rollout.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython/numpy at build time: install pure-Python only; the
        # kernel fallback is selected at import.
        ext_modules = []

setup(ext_modules=ext_modules)
