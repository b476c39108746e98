"""Field validators for configuration dataclasses.

A validator is attached through ``dataclasses.field(metadata={"validator": ...})``
and called as ``validator(inst, field, value, suffix="")``; it raises
``TypeError``/``ValueError`` with the field name (plus ``suffix`` for items of
containers) when the value is rejected.
"""

from __future__ import annotations

import dataclasses as dc
import math
from typing import Any, Protocol, Sequence


def validate_field(inst: Any, field: dc.Field, value: Any) -> None:
    """Run the validator(s) stored in ``field.metadata`` against ``value``."""
    if "validator" not in field.metadata:
        return
    validators = field.metadata["validator"]
    if not isinstance(validators, list):
        validators = [validators]
    for validator in validators:
        validator(inst, field, value)


def validate_fields(inst: Any) -> None:
    """Validate every field of a dataclass instance.

    Call this from ``__post_init__``.
    """
    for field in dc.fields(inst):
        validate_field(inst, field, getattr(inst, field.name))


class ValidatorType(Protocol):
    def __call__(
        self, inst: Any, field: dc.Field, value: Any, suffix: str = ""
    ) -> None: ...


def instance_of(type_: type[Any] | tuple[type[Any], ...]) -> ValidatorType:
    """Reject values that are not instances of ``type_``.

    ``bool`` is not accepted where a number is expected.
    """

    def _validator(inst, field, value, suffix=""):
        if isinstance(value, bool) and bool not in (
            type_ if isinstance(type_, tuple) else (type_,)
        ):
            raise TypeError(
                f"'{field.name}{suffix}' must be of type {type_!r} (got {value!r})"
            )
        if not isinstance(value, type_):
            raise TypeError(
                f"'{field.name}{suffix}' must be of type {type_!r} "
                f"(got {value!r} that is a {value.__class__!r})."
            )

    return _validator


def optional(validator: ValidatorType) -> ValidatorType:
    """Allow ``None`` in addition to what ``validator`` accepts."""

    def _validator(inst, field, value, suffix=""):
        if value is None:
            return
        validator(inst, field, value, suffix=suffix)

    return _validator


def in_(options: Sequence) -> ValidatorType:
    """Reject values not contained in ``options``."""

    def _validator(inst, field, value, suffix=""):
        try:
            in_options = value in options
        except TypeError:
            in_options = False
        if not in_options:
            raise ValueError(
                f"'{field.name}{suffix}' must be in {options!r} (got {value!r})"
            )

    return _validator


def gt(bound: float) -> ValidatorType:
    """Require a finite number strictly greater than ``bound``."""

    def _validator(inst, field, value, suffix=""):
        instance_of((int, float))(inst, field, value, suffix)
        if not math.isfinite(value) or value <= bound:
            raise ValueError(f"'{field.name}{suffix}' must be > {bound} (got {value!r})")

    return _validator


def ge(bound: float) -> ValidatorType:
    """Require a finite number greater than or equal to ``bound``."""

    def _validator(inst, field, value, suffix=""):
        instance_of((int, float))(inst, field, value, suffix)
        if not math.isfinite(value) or value < bound:
            raise ValueError(
                f"'{field.name}{suffix}' must be >= {bound} (got {value!r})"
            )

    return _validator


def deep_iterable(
    member_validator: ValidatorType, iterable_validator: ValidatorType | None = None
) -> ValidatorType:
    """Validate an iterable and then each of its members."""

    def _validator(inst, field, value, suffix=""):
        if iterable_validator is not None:
            iterable_validator(inst, field, value, suffix=suffix)
        for idx, member in enumerate(value):
            member_validator(inst, field, member, suffix=f"{suffix}[{idx}]")

    return _validator


def vector_of(length: int) -> ValidatorType:
    """Require a list/tuple of ``length`` finite numbers."""

    def _validator(inst, field, value, suffix=""):
        if not isinstance(value, (list, tuple)) or len(value) != length:
            raise TypeError(
                f"'{field.name}{suffix}' must be a list of {length} numbers "
                f"(got {value!r})"
            )
        for idx, item in enumerate(value):
            ge(-math.inf)(inst, field, item, suffix=f"{suffix}[{idx}]")

    return _validator


def in_range(lo: float, hi: float) -> ValidatorType:
    """Require a finite number in ``[lo, hi]``."""

    def _validator(inst, field, value, suffix=""):
        ge(lo)(inst, field, value, suffix)
        if value > hi:
            raise ValueError(f"'{field.name}{suffix}' must be <= {hi} (got {value!r})")

    return _validator
