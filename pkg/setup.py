import os
import sys
from setuptools import setup, find_packages


package_basename = 'wealthfactory'
sys.path.insert(0, os.path.join(os.path.dirname(__file__), package_basename))
import _version
version = _version.__version__


setup(name=package_basename,
      version=version,
      author='wealthfactory developers',
      author_email='',
      description='MPI-parallel toolkit to infer poverty maps from household surveys and geospatial layers',
      license='BSD3',
      install_requires=['numpy', 'scipy', 'pandas', 'scikit-learn', 'matplotlib', 'mpytools @ git+https://github.com/adematti/mpytools'],
      extras_require={'test': ['pytest']},
      entry_points={'console_scripts': ['wealthfactory = wealthfactory.cli:main']},
      packages=find_packages())
