from setuptools import find_packages, setup

setup(
    name='cgf',
    version='0.1.0',
    description='Causal-graph fuzzy text forecasting',
    packages=find_packages(exclude=['tests']),
    install_requires=[
        'frogress',
        'numpy',
        'pandas',
        'PyYAML',
        'regex',
        'requests',
        'scipy',
        'torch',
    ],
    entry_points={'console_scripts': ['cgf=cgf.main:main']},
)
