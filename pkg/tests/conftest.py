# File: tests/conftest.py

"""Shared pytest configuration"""


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-horizon scenario runs (deselect with -m 'not slow')")
