#!/usr/bin/env python
import os

try:
    from setuptools import setup
except ImportError:
    from distutils.core import setup

with open(os.path.join(os.path.dirname(__file__), 'README.rst')) as readme:
    long_description = readme.read()


setup(name='pyLendScreen',
      version='1.0.0',
      description="Inclusive loan screening with contrastive learning and "
                  "domain adaptation on synthetic selective-labels data.",
      long_description=long_description,
      classifiers=[
          'Development Status :: 4 - Beta',
          'Environment :: Console',
          'Intended Audience :: Science/Research',
          'License :: OSI Approved :: Apache Software License',
          'Operating System :: OS Independent',
          'Programming Language :: Python :: 3.10',
          'Natural Language :: English',
          'Topic :: Scientific/Engineering :: Artificial Intelligence',
      ],
      keywords='credit screening selective labels domain adaptation '
               'contrastive learning autograd',
      license='Apache 2.0',
      packages=['lendscreen'],
      test_suite='tests.all_tests',
      install_requires=[
          "coveralls",
          "matplotlib>=3.5",
          "numpy>=1.22",
          "pandas>=1.4",
          "pylint>=2.12",
          "scipy>=1.8",
          "StrEnum>=0.4.7",
      ],
      entry_points={
          'console_scripts': ['lendscreen=lendscreen.cli:main'],
      },
      zip_safe=False,
      )
