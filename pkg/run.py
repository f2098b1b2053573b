import sys

from flmarket.cli import main
from flmarket.core.logging_config import AppLogger

if __name__ == "__main__":
    app_logger = AppLogger()
    try:
        sys.exit(main())
    finally:
        app_logger.cleanup()
