#! /usr/bin/env python
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# 
#     http://www.apache.org/licenses/LICENSE-2.0
# 
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import sys

from setuptools import setup


VERSION = eval(open('dcim_avsr/VERSION.py','rb').read())


setup_options = dict(
    name='dcim-avsr',
    version=VERSION,
    description='Audio-visual speech recognition with dual conformer interaction',
    long_description="""
A from-scratch audio-visual speech recognizer: log-mel and lip-video
front-ends, Conformer and Efficient Conformer encoders, dual conformer
interaction adapters between the two streams, CTC training with
intermediate losses, and a three-stage ASR / VSR / AVSR training pipeline.

Everything is written against numpy, including a small reverse-mode
autodiff tape, so the whole model can be read, gradient-checked and
trained at toy scale on a laptop. A synthetic token corpus with matching
audio and video stands in for real data.

The command line entry point is dcim-avsr (synth, train, eval,
noise-sweep, ablate, verify, param-count).
""",
    packages=['dcim_avsr', 'dcim_avsr.tests'],
    package_dir={'dcim_avsr':'dcim_avsr'},
    python_requires='>=3.7',
    install_requires=['numpy>=1.17'],
    extras_require={'test': ['hypothesis']},
    entry_points={'console_scripts': ['dcim-avsr=dcim_avsr.cli:main']},
    license='Apache',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: Apache Software License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
)


def main():
    if sys.version_info < (3, 7):
        sys.stderr.write('dcim-avsr needs Python 3.7 or newer\n')
        sys.exit(1)
    setup(**setup_options)


if __name__ == '__main__':
    main()
