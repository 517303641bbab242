from setuptools import setup, find_packages

setup(
    name="sfmipa",
    version="1.0.0",
    description="SFMIPA: timeout-controlled stochastic flow model simulator with IPA goodput gradients",
    packages=find_packages(include=["sfmipa", "sfmipa.*"]),
    python_requires=">=3.8",
    install_requires=["pandas", "numpy", "scipy"],
    extras_require={"dev": ["pytest", "hypothesis"]},
    entry_points={
        "console_scripts": [
            "sfmipa=sfmipa.cli.main:main",
        ],
    },
)
