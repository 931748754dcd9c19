"""grasplab: backdoor gradient-shaping and trigger-inversion desk laboratory."""

__version__ = "0.1.0"
