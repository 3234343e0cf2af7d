from setuptools import setup, find_packages

setup(
    name="deepboost",
    version="1.0.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["main"],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "scikit-learn>=1.0",
        "Pillow>=9.1",
        "matplotlib>=3.5"
    ],
    extras_require={
        "test": ["pytest>=7.0"]
    },
    entry_points={
        "console_scripts": ["deepboost=main:main"]
    }
)
