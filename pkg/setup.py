from setuptools import setup

with open("README.md", "r", encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="rtbconfig",
    version="0.1.0",
    author="Milan Meulemans",
    author_email="milan.meulemans@live.be",
    description="Campaign configuration search over real-time bidding attribution logs",
    keywords="rtb real-time bidding advertising conversion rate logistic regression campaign",
    license="LGPLv3+",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: GNU Lesser General Public License v3 or later (LGPLv3+)",
        "Operating System :: OS Independent",
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Natural Language :: English",
        "Topic :: Scientific/Engineering :: Information Analysis",
        "Typing :: Typed",
    ],
    python_requires=">=3.10",
    packages=["rtbconfig"],
    package_data={"rtbconfig": ["py.typed"]},
    install_requires=[
        "aiohttp",
        "click>=8",
        "numpy>=1.22",
        "pandas>=1.5",
        "PyYAML>=6",
        "scikit-learn>=1.1",
    ],
    entry_points={"console_scripts": ["rtbconfig=rtbconfig.cli:run"]},
)
