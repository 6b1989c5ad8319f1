from setuptools import setup, find_packages

# What packages are required for this module to be executed?
REQUIRED = [
    "dm-tree",
    "numpy",
    "pandas",
    "scipy",
    "torch",
]

EXTRAS = {
    "test": ["hypothesis"],
}

setup(
    name="ditpy",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    install_requires=REQUIRED,
    extras_require=EXTRAS,
    entry_points={"console_scripts": ["ditpy=ditpy._cli:main"]},
)
