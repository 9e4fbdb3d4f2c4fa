"""Build the optional compiled step kernel.

The package works without it (a numpy fallback is selected at import);
building the extension just makes the per-timestep loop faster.
"""
from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    import numpy

    ext_modules = cythonize(
        ["src/epimob/engine/_kernel.pyx"],
        compiler_directives={"language_level": "3"},
    )
    include_dirs = [numpy.get_include()]
except ImportError:
    include_dirs = []

for ext in ext_modules:
    ext.include_dirs = include_dirs

setup(ext_modules=ext_modules)
