#!/usr/bin/env python3

# Always prefer setuptools over distutils
from setuptools import find_packages, setup

long_description = open("README.md", "r", encoding="utf-8").read()

setup(
    name="isacdesign",
    description="Waveform and mismatched filter co-design for MIMO-OFDM "
    "integrated sensing and communication",
    author="",
    author_email="",
    license="Apache-2.0",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=("tests",)),
    python_requires=">=3.8",
    install_requires=[
        "click",
        "cvxpy>=1.1",
        "more-itertools",
        "numpy>=1.20",
        "pandas",
        "python-slugify",
        "scikit-learn>=0.24.2",
        "scipy>=1.6",
        "tqdm",
    ],
    extras_require={
        "test": [
            "pytest",
            "pytest-cov",
            "pytest-env",
        ],
        "dev": [
            "pre-commit",
            "black",  # Used in pre-commit hooks
            "pytest",
            "pytest-cov",
            "pytest-env",
        ],
    },
    entry_points={
        "console_scripts": [
            "isacdesign=isacdesign.cli:cli",
        ],
    },
    classifiers=[],
)
