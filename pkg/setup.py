from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    # Pure-python install: the package falls back to the NumPy kernels.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "vialtrack._kernels._native",
                ["src/vialtrack/_kernels/_native.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
