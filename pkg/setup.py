#!/usr/bin/env python

from setuptools import setup

setup(name='mixedbo',
      version='0.1.0',
      description='Bayesian optimization over mixed continuous, binary, ordinal and categorical spaces',
      author='mixedbo developers',
      classifiers=['Programming Language :: Python :: 3 :: Only'],
      python_requires='>=3.8',
      install_requires=[
          'attrs>=22.2.0',
          'singer-python==5.13.0',
          'backoff==1.8.0',
          'numpy>=1.21',
          'scipy>=1.7',
      ],
      extras_require= {
          'dev': [
              'pylint==2.17.7',
              'nose2==0.14.0',
          ]
      },
      entry_points='''
          [console_scripts]
          mixedbo=mixedbo:main
      ''',
      packages=['mixedbo', 'mixedbo.tests'],
      package_data = {
          'mixedbo': [
              "schemas/experiment_config.json",
              "schemas/run_record.json",
              "schemas/search_space.json",
          ],
      },
      include_package_data=True,
)
