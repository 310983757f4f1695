"""Logging and diagnostics reporting for Krylov runs."""

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import colorama
from colorama import Fore, Style

if TYPE_CHECKING:
    from .models import AssertionRecord, ConvergenceTrace, RunConfig


class ColoredFormatter(logging.Formatter):
    """Formatter that colors the level name of console records."""

    COLORS = {
        'DEBUG': Fore.CYAN,
        'INFO': Fore.GREEN,
        'WARNING': Fore.YELLOW,
        'ERROR': Fore.RED,
        'CRITICAL': Fore.MAGENTA,
    }

    def format(self, record):
        # the record is shared with the file handler, so color a copy
        record = logging.makeLogRecord(record.__dict__)
        if record.levelname in self.COLORS:
            record.levelname = f"{self.COLORS[record.levelname]}{record.levelname}{Style.RESET_ALL}"
        return super().format(record)


_CONSOLE_LEVELS = {0: logging.WARNING, 1: logging.INFO}


class KrylovLogger:
    """Logger for solver runs and experiment assertions."""

    def __init__(self, log_file: Optional[Path] = None, enable_colors: bool = True, verbosity: int = 0):
        """Initialize the logger.

        Parameters
        ----------
        log_file: Path | None
            Path to log file, if None only console logging is enabled
        enable_colors: bool
            Whether to enable colored console output
        verbosity: int
            0 shows warnings, 1 adds info, 2 or more adds debug records
        """
        self.log_file = log_file
        self.enable_colors = enable_colors
        self.verbosity = verbosity
        self.logger = logging.getLogger('krylovsketch')
        self.logger.setLevel(logging.DEBUG)
        self.logger.handlers.clear()

        if enable_colors:
            colorama.init()

        self._setup_console_handler()
        if log_file:
            self._setup_file_handler()

    def _setup_console_handler(self):
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(_CONSOLE_LEVELS.get(self.verbosity, logging.DEBUG))
        formatter_cls = ColoredFormatter if self.enable_colors else logging.Formatter
        console_handler.setFormatter(formatter_cls('%(levelname)s: %(message)s'))
        self.logger.addHandler(console_handler)

    def _setup_file_handler(self):
        if not self.log_file:
            return
        self.log_file.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(self.log_file, mode='a', encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        self.logger.addHandler(file_handler)

    def log_run_start(self, config: RunConfig):
        """Log the start of a solver run."""
        self.logger.info(f"Starting run [{config.source_label()}]")
        self.logger.info(f"Variants: {', '.join(v.value for v in config.variants)}")
        self.logger.info(f"d_max={config.d_max} k={config.trunc_k or 'full'} "
                         f"sketch={config.sketch_kind.label}/{config.effective_sketch_dim} seed={config.seed}")
        self.logger.info("-" * 60)

    def log_run_end(self, trace: ConvergenceTrace):
        """Log the end of a solver run."""
        self.logger.info("-" * 60)
        self.logger.info(f"Run complete. {len(trace.rows)} rows recorded.")
        for note in trace.notes:
            self.logger.info(f"note: {note}")

    def log_step(self, variant: str, d: int, rel_error: float):
        """Log the error of one approximant."""
        self.logger.debug(f"{variant} d={d}: rel_error={rel_error:.3e}")

    def log_breakdown(self, d: int, h_next: float):
        """Log an Arnoldi breakdown."""
        self.logger.info(f"Arnoldi breakdown at d={d} (h={h_next:.3e}); Krylov space is invariant")

    def log_dependence(self, d: int, tau: float):
        """Log a near-dependent sketched basis vector."""
        self.logger.warning(f"Sketched basis nearly dependent at d={d} (tau={tau:.3e})")

    def log_reference(self, mode: str, source: str):
        """Log where the reference solution came from."""
        self.logger.info(f"Reference solution [{mode}] from {source}")

    def log_assertion(self, record: AssertionRecord):
        """Log the outcome of an experiment assertion."""
        if record.passed:
            self.logger.info(f"PASS {record.name}: {record.detail}")
        else:
            self.logger.error(f"FAIL {record.name}: {record.detail}")

    def log_error(self, message: str, exception: Optional[Exception] = None):
        """Log an error message."""
        if exception:
            self.logger.error(f"{message}: {str(exception)}")
        else:
            self.logger.error(message)

    def log_warning(self, message: str):
        """Log a warning message."""
        self.logger.warning(message)

    def log_info(self, message: str):
        """Log an info message."""
        self.logger.info(message)

    def log_debug(self, message: str):
        """Log a debug message."""
        self.logger.debug(message)


# Global logger instance
_logger_instance: Optional[KrylovLogger] = None


def get_logger() -> KrylovLogger:
    """Get the global logger instance."""
    global _logger_instance
    if _logger_instance is None:
        _logger_instance = KrylovLogger()
    return _logger_instance


def setup_logger(log_file: Optional[Path] = None, enable_colors: bool = True, verbosity: int = 0):
    """Setup the global logger.

    Parameters
    ----------
    log_file: Path | None
        Path to log file
    enable_colors: bool
        Whether to enable colored console output
    verbosity: int
        Console verbosity, see :class:`KrylovLogger`
    """
    global _logger_instance
    _logger_instance = KrylovLogger(log_file, enable_colors, verbosity)
