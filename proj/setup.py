"""Builds the m3py extension directly from the C++ sources.

The CMake build also produces the module (target `m3py`); this setup exists so
`pip install --no-build-isolation -e .` works without CMake integration.
"""

import glob

from pybind11.setup_helpers import ParallelCompile, Pybind11Extension, build_ext
from setuptools import setup

ParallelCompile("NPY_NUM_BUILD_JOBS").install()

sources = sorted(glob.glob("src/**/*.cpp", recursive=True)) + ["python/module.cpp"]

ext = Pybind11Extension(
    "m3py",
    sources,
    include_dirs=["include", "vendor", "/usr/include/eigen3"],
    cxx_std=20,
    extra_compile_args=["-O2"],
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
