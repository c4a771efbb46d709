from setuptools import setup, find_packages

__version__ = '0.1.0'

packages = find_packages(exclude=['tests', 'tests.*'])

# requirements.txt simply holds '.', so install_requires is the single
# source of truth for dependencies.
install_requires = ['coverage', 'matplotlib', 'numpy', 'pandas>=1.5',
                    'scipy', 'scikit-learn', 'simplejson']

setup(
    name='pyspmi',
    version=__version__,
    description='Sample-propagation mutual information estimation for '
                'noisy feedforward networks',
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
    packages=packages,
    install_requires=install_requires,
    test_suite='tests',
    license='BSD 2-Clause License',
    classifiers=[
        "License :: OSI Approved :: BSD License",
        "Programming Language :: Python :: 3.8"
    ],
    include_package_data=True,
    package_data={
        'pyspmi': ['log_config.json', 'pyspmi_config.json']
    },
    entry_points={
        'console_scripts': ['pyspmi=pyspmi.run_pyspmi:_main']
    }
)
