from spinsplat.exceptions import SpinSplatError

__version__ = '0.1.0'

__all__ = ['SpinSplatError', '__version__']
