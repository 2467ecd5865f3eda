import logging
import sys

import structlog


class StructuredLogger:
    """Structured logging setup"""

    _configured = False

    @classmethod
    def configure_logging(cls, level: str = None, fmt: str = None, force: bool = False):
        """Configure structured logging"""
        from tetmg.core.config import settings

        if cls._configured and not force:
            return

        level = (level or settings.LOG_LEVEL).upper()
        fmt = fmt or settings.LOG_FORMAT
        renderer = (
            structlog.processors.JSONRenderer()
            if fmt == "json"
            else structlog.dev.ConsoleRenderer(colors=False)
        )

        # Configure structlog
        structlog.configure(
            processors=[
                structlog.stdlib.filter_by_level,
                structlog.stdlib.add_logger_name,
                structlog.stdlib.add_log_level,
                structlog.stdlib.PositionalArgumentsFormatter(),
                structlog.processors.TimeStamper(fmt="ISO"),
                structlog.processors.StackInfoRenderer(),
                structlog.processors.format_exc_info,
                structlog.processors.UnicodeDecoder(),
                renderer,
            ],
            context_class=dict,
            logger_factory=structlog.stdlib.LoggerFactory(),
            wrapper_class=structlog.stdlib.BoundLogger,
            cache_logger_on_first_use=True,
        )

        # stdout carries CSV reports, logs go to stderr
        logging.basicConfig(
            level=getattr(logging, level, logging.INFO),
            format="%(message)s",
            stream=sys.stderr,
            force=True,
        )
        cls._configured = True
