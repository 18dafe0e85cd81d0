"""R4 robot-control communications stack.

Pure-Python implementation of the R4 board's ASCII UDP protocol:
a frame codec, a virtual board simulator, a host-side client SDK and
CLI tools for control, monitoring and capture conformance checking.
"""

__version__ = "0.1.0"
