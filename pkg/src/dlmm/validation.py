"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numbers

import numpy as np
import pandas as pd

from .data import LongDataset
from .exceptions import ValidationError


def check_long_data(X, y=None, factors=None) -> LongDataset:
    """Coerce estimator input to a :class:`LongDataset`.

    ``X`` is a ``LongDataset`` or a DataFrame with at least ``eu`` and
    ``time`` columns. ``y`` overrides (or supplies) the response column.
    """
    if isinstance(X, LongDataset):
        return X if y is None else X.with_y(y)
    if not isinstance(X, pd.DataFrame):
        raise ValidationError(f"expected a DataFrame or LongDataset, got {type(X).__name__}")
    frame = X.copy()
    if y is not None:
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(frame):
            raise ValidationError(f"X has {len(frame)} rows but y has {len(y)}")
        frame["y"] = y
    elif "y" not in frame.columns:
        raise ValidationError("no response: pass y or include a 'y' column")
    if "group" in frame.columns:
        frame = frame.drop(columns="group")
    return LongDataset(frame, factors=factors)


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_choice(value, name: str, choices) -> str:
    if value not in choices:
        raise ValidationError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value
