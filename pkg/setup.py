from setuptools import setup

setup(
    name="elasticdb",
    version="0.1.0",
    packages=["elasticdb"] + [f"elasticdb.{p}" for p in (
        "bench", "cluster", "concurrency", "config", "coordinator", "core", "partitioning", "query", "storage",
        "tests",
    )],
    package_dir={"elasticdb": "."},
    package_data={"elasticdb.config": ["settings.yaml"]},
    install_requires=[
        "pyyaml>=6.0",
        "pydantic>=2.0",
        "simpy>=4.0",
        "numpy>=1.24",
    ],
)
