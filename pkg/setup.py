"""Build script: compiles the optional C search kernels.

Set HAMMIX_NO_EXT=1 to skip the extension entirely; the package then runs
on the pure-numpy kernels.
"""

import os
import platform

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("HAMMIX_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        extra = ["-O3"]
        if platform.machine() in ("x86_64", "AMD64"):
            extra.append("-mpopcnt")
        ext_modules = cythonize(
            [
                Extension(
                    "hammix._ckernels",
                    ["src/hammix/_ckernels.pyx"],
                    extra_compile_args=extra,
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "initializedcheck": False,
                "cdivision": True,
            },
        )
    except Exception as exc:  # no Cython / no compiler: fall back to pure kernels
        print(f"hammix: building without compiled kernels ({exc})")
        ext_modules = []

setup(ext_modules=ext_modules)
