from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="infobound",
    version="0.1.0",
    description="Information-theoretic L_p lower bounds on online prediction error, with k-NN estimators, Gaussian oracles and a benchmarking CLI.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="infobound developers",
    packages=find_packages(include=["infobound", "infobound.*"]),
    package_data={"infobound": ["default_scenario.ini"]},
    install_requires=[
        "click>=8.0.0",
        "pydantic>=2.0.0",
        "python-dotenv>=0.21.0",
        "numpy>=1.23.0",
        "scipy>=1.9.0",
        "filterpy>=1.4.5"
    ],
    python_requires=">=3.9",
    entry_points={
        'console_scripts': [
            'infobound=infobound.cli:main'
        ]
    },
    extras_require={
        'dev': [
            'pytest>=7.0.0'
        ]
    },
)
