from ._logger import get_logger, log_this_fr, setup_logging

__all__ = ["get_logger", "log_this_fr", "setup_logging"]
