from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; simulate falls back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("pclmi._rk4", ["src/pclmi/_rk4.pyx"], optional=True, extra_compile_args=["-O3"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
