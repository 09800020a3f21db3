import os
import sys

from setuptools import find_packages, setup

if __name__ == '__main__':

    if sys.version_info < (3, 8):
        raise ValueError(
            'Unsupported Python version %d.%d.%d found. motionflow requires '
            'Python 3.8 or higher.' % (sys.version_info.major,
                                       sys.version_info.minor,
                                       sys.version_info.micro))

    HERE = os.path.abspath(os.path.dirname(__file__))
    with open(os.path.join(HERE, 'requirements.txt')) as fp:
        install_reqs = [
            r.rstrip() for r in fp.readlines()
            if r.strip() and not r.startswith('#')
            and not r.startswith('git+') and not r.startswith('pytest')
        ]

    with open(os.path.join(HERE, 'motionflow', '__version__.py')) as fh:
        version = fh.readlines()[-1].split()[-1].strip("\"'")

    with open(os.path.join(HERE, 'README.md'), encoding='utf-8') as fh:
        long_description = fh.read()

    setup(
        name='motionflow',
        description='Conditional normalizing flow for multi-entity motion '
        'forecasting.',
        long_description=long_description,
        long_description_content_type='text/markdown',
        version=version,
        packages=find_packages(exclude=['docs', 'examples', 'tests']),
        install_requires=install_reqs,
        extras_require={'test': ['pytest']},
        entry_points={
            'console_scripts': ['motionflow=motionflow.cli:main'],
        },
        include_package_data=True,
        license='Apache License',
        platforms=['Linux'],
        classifiers=[
            'Environment :: Console',
            'Intended Audience :: Developers',
            'Intended Audience :: Science/Research',
            'Natural Language :: English',
            'Operating System :: OS Independent',
            'Topic :: Scientific/Engineering :: Artificial Intelligence',
            'Programming Language :: Python :: 3.8',
            'Programming Language :: Python :: 3.9',
            'Programming Language :: Python :: 3.10',
        ],
        keywords=['normalizing flow', 'forecasting', 'trajectories'],
        python_requires='>=3.8',
    )
