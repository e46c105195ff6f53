from setuptools import setup, find_packages

setup(
    name="jampr",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    python_requires=">=3.9",
    install_requires=[
        "torch",
        "numpy",
        "scipy",
        "pandas",
        "matplotlib",
        "pydantic>=2.6",
        "pydantic-settings",
        "python-dotenv",
        "click",
    ],
    extras_require={
        "dev": [
            "pytest",
        ]
    },
    entry_points={
        "console_scripts": [
            "jampr=jampr.main:cli",
        ]
    }
)
