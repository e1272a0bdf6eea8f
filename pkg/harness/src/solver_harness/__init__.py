"""Thin runner for generated optimization solver scripts."""

from .runner import (
    EXIT_NON_NUMERIC,
    EXIT_SCRIPT_ERROR,
    EXIT_SUCCESS,
    EXIT_TIMEOUT,
    main,
    run_script,
    validate_answer_block,
)

__all__ = [
    "EXIT_NON_NUMERIC",
    "EXIT_SCRIPT_ERROR",
    "EXIT_SUCCESS",
    "EXIT_TIMEOUT",
    "main",
    "run_script",
    "validate_answer_block",
]
