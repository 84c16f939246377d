import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_kwargs = dict(
    optional=True,  # a failed compile leaves the pure-Python kernels in charge
    include_dirs=[numpy.get_include()],
    extra_compile_args=["-O3"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

if cythonize is not None:
    ext_modules = cythonize(
        [Extension("sprayscan._core", ["src/sprayscan/_core.pyx"], **ext_kwargs)],
        compiler_directives={"language_level": "3"},
    )
else:
    # without Cython the package still works through sprayscan._pycore
    ext_modules = []

setup(ext_modules=ext_modules)
