"""Fisher-information toolkit for squeezed-light range-Doppler lidar"""

__version__ = "1"
