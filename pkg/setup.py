from setuptools import setup

setup(
    name="rcclt",
    version="0.1.0",
    description=(
        "Numerical lab for the quantitative central limit theorem "
        "of the random conductance model"
    ),
    license="Apache License Version 2.0",
    packages=["rcclt"],
    python_requires=">=3.8",
    install_requires=[
        "numpy >= 1.20",
        "pandas >= 1.4",
        "scipy >= 1.7",
    ],
    entry_points={"console_scripts": ["rcclt = rcclt.cli:main"]},
    zip_safe=False,
)
