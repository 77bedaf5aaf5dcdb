"""Test `sonoglove.__version__`."""
import re


def test_version():
    """Test version string"""
    from sonoglove import __version__
    assert isinstance(__version__, str)
    if __version__ != "UNKNOWN":
        major_minor = re.split('[.+-]', __version__)[:2]
        assert all(i.isdigit() for i in major_minor), "must start with Major.minor"
