from __future__ import annotations

import typing as t

from .errors import PrototscError


class ValidationError(PrototscError):
    """A validator raises this in order to stop validation and report one or more
    error messages about a configuration.

    Depending on the context, the messages can be different formats. Data
    validators (checking the whole configuration) should use a dict mapping field
    names to messages. Value validators (checking one field) should use a list of
    messages for that field. Individual validator callables can also raise a single
    message as a shortcut for a list.

    :param message: One or more error messages.
    """

    prefix = "config"

    def __init__(self, message: str | list[t.Any] | dict[str, t.Any]) -> None:
        Exception.__init__(self, message)
        self.message = message  # type: ignore[assignment]

    def __str__(self) -> str:
        if isinstance(self.message, dict):
            return "; ".join(
                f"{k or '<config>'}: {' '.join(str(m) for m in _flatten(v))}"
                for k, v in self.message.items()
            )

        if isinstance(self.message, list):
            return " ".join(str(m) for m in _flatten(self.message))

        return str(self.message)


def _flatten(value: t.Any) -> t.Iterator[t.Any]:
    if isinstance(value, list):
        for item in value:
            yield from _flatten(item)
    elif value is not None:
        yield value


class ValueValidatorCallable(t.Protocol):
    """The signature that all value validator functions must have."""

    def __call__(self, value: t.Any, data: dict[str, t.Any]) -> t.Any: ...


class DataValidatorCallable(t.Protocol):
    """The signature that all data validator functions must have."""

    def __call__(self, data: dict[str, t.Any]) -> None: ...


class Length:
    """Check that the input's length is within a range. Either bound is
    optional, and both bounds are inclusive.

    :param min: The length must be >= this value.
    :param max: The length must be <= this value.
    """

    def __init__(self, min: int | None = None, max: int | None = None) -> None:
        self.min = min
        self.max = max

    def __call__(self, value: t.Any, data: dict[str, t.Any]) -> None:
        lv = len(value)

        if (self.min is None or lv >= self.min) and (
            self.max is None or lv <= self.max
        ):
            return

        if self.max is None:
            message = f"at least {self.min}"
        elif self.min is None:
            message = f"at most {self.max}"
        elif self.min == self.max:
            message = f"exactly {self.min}"
        else:
            message = f"between {self.min} and {self.max}"

        raise ValidationError(f"Length must be {message}, but was {lv}.")


class NumberRange:
    """Check that the input is within a range. Either bound is optional. Bounds
    are inclusive unless ``exclusive_min`` is set, which is needed for values such
    as a temperature that must be strictly positive.

    :param min: The input must be >= this value.
    :param max: The input must be <= this value.
    :param exclusive_min: The input must be > ``min`` instead.
    """

    def __init__(
        self,
        min: t.Any | None = None,
        max: t.Any | None = None,
        exclusive_min: bool = False,
    ) -> None:
        self.min = min
        self.max = max
        self.exclusive_min = exclusive_min

    def __call__(self, value: t.Any, data: dict[str, t.Any]) -> None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError("Must be a number.")

        above = (
            self.min is None
            or (value > self.min if self.exclusive_min else value >= self.min)
        )

        if above and (self.max is None or value <= self.max):
            return

        low = f"greater than {self.min}" if self.exclusive_min else f"at least {self.min}"

        if self.max is None:
            message = low
        elif self.min is None:
            message = f"at most {self.max}"
        elif self.exclusive_min:
            message = f"{low} and at most {self.max}"
        else:
            message = f"between {self.min} and {self.max}"

        raise ValidationError(f"Must be {message}.")


class OneOf:
    """Check that the input is one of a fixed set of choices.

    :param choices: The allowed values.
    """

    def __init__(self, choices: t.Iterable[t.Any]) -> None:
        self.choices = list(choices)

    def __call__(self, value: t.Any, data: dict[str, t.Any]) -> None:
        if value not in self.choices:
            names = ", ".join(repr(c) for c in self.choices)
            raise ValidationError(f"Must be one of {names}.")


class IsInteger:
    """Check that the input is an integer (booleans are rejected)."""

    def __call__(self, value: t.Any, data: dict[str, t.Any]) -> None:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError("Must be an integer.")


class IsBool:
    """Check that the input is ``true`` or ``false``, not a number."""

    def __call__(self, value: t.Any, data: dict[str, t.Any]) -> None:
        if not isinstance(value, bool):
            raise ValidationError("Must be true or false.")


def validate_value(
    validators: list[ValueValidatorCallable | list[t.Any]],
    value: t.Any,
    data: dict[str, t.Any],
) -> None:
    """Call each validator on a single value, collecting all messages.

    A list in the validator list indicates that the value is a sequence and the
    sub-list of validators should be applied to each item. Lists can be nested to
    validate nested sequences.

    :param validators: Value validators, or nested lists of them.
    :param value: The value being validated.
    :param data: All values being validated, of which this is one item.
    """
    errors: list[t.Any] = []

    for f in validators:
        # A list in the validator list means apply that sub-list of validators to
        # each item in the value.
        if isinstance(f, list):
            list_errors: list[t.Any] = []

            for item in value:
                try:
                    validate_value(f, item, data)
                except ValidationError as e:
                    if isinstance(e.message, list):
                        list_errors.extend(e.message)
                    else:
                        list_errors.append(e.message)
                else:
                    # Placeholder for item that had no errors.
                    list_errors.append(None)

            if any(list_errors):
                errors.append(list_errors)
        else:
            try:
                f(value, data)
            except ValidationError as e:
                if isinstance(e.message, list):
                    errors.extend(e.message)
                else:
                    errors.append(e.message)

    if errors:
        raise ValidationError(errors)


def validate_data(
    items: dict[str, list[t.Any]],
    validators: list[DataValidatorCallable],
    data: dict[str, t.Any],
) -> None:
    """Validate a collection of named values. Each value is validated with its own
    validators first, then the data validators are called on the whole collection.
    All messages are collected and raised together as a dict mapping names to lists
    of messages. The empty name holds messages about the collection as a whole.

    :param items: Maps names to the value validators for that name.
    :param validators: Validators called with the whole collection.
    :param data: The values being validated.
    """
    errors: dict[str, list[t.Any]] = {"": []}

    for name, item_validators in items.items():
        if name not in data:
            continue

        try:
            validate_value(item_validators, data[name], data)
        except ValidationError as e:
            errors[name] = e.message  # type: ignore[assignment]

    # Cross-field validators only make sense once individual values are valid.
    if len(errors) == 1:
        for f in validators:
            try:
                f(data)
            except ValidationError as e:
                if isinstance(e.message, dict):
                    for k, v in e.message.items():
                        if k not in errors:
                            errors[k] = []

                        if isinstance(v, list):
                            errors[k].extend(v)
                        else:
                            errors[k].append(v)
                elif isinstance(e.message, list):
                    errors[""].extend(e.message)
                else:
                    errors[""].append(e.message)

    if not errors[""]:
        del errors[""]

    if errors:
        raise ValidationError(errors)
