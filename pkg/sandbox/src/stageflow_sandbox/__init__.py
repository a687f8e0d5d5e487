"""Isolated evaluation of candidate programs that define a `solve` entry function.

Protocol: one JSON request line on stdin, one JSON response line on stdout,
per process invocation. The exit status is 0 whenever a response was emitted;
the verdict lives in the response record. NOT hardened against adversarial
code — intended for desk-scale benchmark programs only.
"""

from .runner import evaluate_request, main

__all__ = ["evaluate_request", "main"]
__version__ = "0.1.0"
