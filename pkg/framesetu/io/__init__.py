from .flo import read_flow_file, write_flow_file
from .frames import read_frame, write_frame

__all__ = ["read_flow_file", "write_flow_file", "read_frame", "write_frame"]
