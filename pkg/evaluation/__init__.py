"""Evaluation harness for PatientAlign-Lite."""

from evaluation.schemas import EvalConfig

__all__ = ["EvalConfig"]
