# Quasi-periodic solution toolkit for coupled reversible NLS systems on T^2

__version__ = "0.3.0"
