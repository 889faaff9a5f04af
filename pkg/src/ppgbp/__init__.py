"""Blood-pressure regression from PPG and remote-PPG pulse windows."""

__version__ = "0.1.0"
