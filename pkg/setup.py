from pathlib import Path
from setuptools import find_packages, setup

this_directory = Path(__file__).parent


long_description = (this_directory / "README.rst").read_text()
requirements = (
    (this_directory / "requirements" / "requirements-core.txt").read_text().split("\n")
)


setup(
    classifiers=[
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Operating System :: OS Independent",
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "Topic :: Multimedia :: Sound/Audio :: Speech",
    ],
    name="mlkws",
    version="0.0.1",
    author="Authors & Contributors",
    license="MIT",
    python_requires=">=3.9",
    install_requires=requirements,
    description=(
        "Multi-look neural speech enhancement and attention-fused keyword spotting "
        "with JAX"
    ),
    long_description_content_type="text/x-rst",
    long_description=long_description,
    packages=find_packages(exclude=["tests", "examples*"]),
    include_package_data=True,
    package_data={"mlkws": ["default-logging-config.yaml"]},
    entry_points={"console_scripts": ["mlkws = mlkws.cli:main"]},
)
