from setuptools import setup

with open("README.md", "r") as f:
    long_description = f.read()

with open("requirements.txt", "r") as f:
    install_requires = [line.strip() for line in f if line.strip()]

setup(
    name="gsdsynth",
    version="0.1",
    description="Differentially private synthetic data by genetic projection",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=["gsdsynth"],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: POSIX :: Linux",
    ],
    python_requires=">=3.8",
    install_requires=install_requires,
    test_suite="test",
    entry_points={
        "console_scripts": [
            "gsdsynth-generate=gsdsynth.generate:run",
            "gsdsynth-eval=gsdsynth.evaluate:run",
            "gsdsynth-demo-sigmoid=gsdsynth.demo_sigmoid:run",
        ],
    },
)
