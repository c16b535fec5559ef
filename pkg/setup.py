#!/usr/bin/env python3

from setuptools import setup, find_packages

setup(
    name='workload-hsc',
    version='0.1.0',
    packages=find_packages(include=['workload_hsc', 'workload_hsc.*']),
    install_requires=['numpy', 'jax', 'jaxlib', 'chex', 'tqdm'],
    entry_points={
        'console_scripts': ['workload-hsc=workload_hsc.cli:main'],
    },
)
