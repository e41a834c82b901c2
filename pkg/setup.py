from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [
        line.strip() for line in fh.read().splitlines()
        if line.strip() and not line.startswith("#")
    ]

setup(
    name="spinekit",
    version="0.1.0",
    author="spinekit developers",
    description="Two-phase semantic/instance spine segmentation toolkit with phantoms and panoptic evaluation",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["app"],
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "spinekit=app:main",
        ],
    },
)
