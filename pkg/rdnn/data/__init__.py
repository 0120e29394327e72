from .load import read_checkpoint, read_pairs, read_trajectory
from .manager import DataPaths, DataSaver
from .writer import write_checkpoint, write_history, write_pairs, write_table, write_trajectory

__all__ = [
    "DataPaths",
    "DataSaver",
    "read_checkpoint",
    "read_pairs",
    "read_trajectory",
    "write_checkpoint",
    "write_history",
    "write_pairs",
    "write_table",
    "write_trajectory",
]
