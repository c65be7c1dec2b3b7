"""Build script.

The package works as pure Python. When Cython and a C compiler are
available, a small extension module with the tree kernels is compiled;
otherwise the build silently falls back to the numpy implementation
selected at import time.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "fmekit.kernels._ctree",
        ["src/fmekit/kernels/_ctree.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


class optional_build_ext(build_ext):
    """Compile the kernels if possible, never fail the install over it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain
            print(f"warning: skipping compiled kernels ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc})")


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
