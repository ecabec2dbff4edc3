from setuptools import find_packages, setup

# Package metadata
NAME = "tdvsm"
VERSION = "1.0"
DESCRIPTION = "tdvsm: TSO-DSO coordination for long-term voltage stability margins"
LICENSE = "Apache 2.0"

# Required dependencies
REQUIRED_PACKAGES = [
    "torch>=2.3.1",
    "numpy>=1.24.4",
    "tqdm>=4.66.1",
    "hydra-core>=1.3.2",
    "iopath>=0.1.10",
    "pyyaml>=6.0",
    "networkx>=3.1",
    "pandas>=2.0",
]

EXTRA_PACKAGES = {
    "dev": ["pytest>=7.4"],
}

# Setup configuration
setup(
    name=NAME,
    version=VERSION,
    description=DESCRIPTION,
    license=LICENSE,
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    package_data={"tdvsm": ["cases/*.case"], "tdvsm_configs": ["*.yaml"]},
    install_requires=REQUIRED_PACKAGES,
    extras_require=EXTRA_PACKAGES,
    python_requires=">=3.10",
    entry_points={"console_scripts": ["tdvsm=tdvsm.coord.cli:main"]},
)
