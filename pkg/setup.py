"""Builds the optional Cython kernels (environment and optimizer).

If Cython or a C compiler is missing the package still installs and falls back
to the numpy kernels at import time.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using pure-Python fallback")


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    common = dict(
        include_dirs=[np.get_include()],
        # no FMA contraction: the compiled loops must round exactly like the numpy fallbacks
        extra_compile_args=["-O3", "-ffp-contract=off", "-fno-math-errno"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    exts = [
        Extension("coopmi.env._ckernels", ["src/coopmi/env/_ckernels.pyx"], **common),
        Extension("coopmi.tensor._ckernels", ["src/coopmi/tensor/_ckernels.pyx"], **common),
    ]
    return cythonize(exts, compiler_directives={"language_level": "3"}, quiet=True)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
