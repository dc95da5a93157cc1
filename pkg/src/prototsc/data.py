"""Loading, resampling, normalizing, splitting, and generating labeled
multivariate time series.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import typing as t

import numpy as np

from .errors import DataError
from .errors import ParseError

logger = logging.getLogger(__name__)


@dataclasses.dataclass(eq=False)
class TimeSeriesDataset:
    """A labeled set of fixed-length multivariate series.

    :param samples: Array of shape ``(N, V, L)``.
    :param labels: Class indices of shape ``(N,)``, each in ``[0, C)``.
    :param class_names: Original label strings, indexed by class.
    :param origin: Where the data came from, for messages and reports.
    """

    samples: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    origin: str = ""

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

        if self.samples.ndim != 3:
            raise DataError(
                f"{self.origin or 'dataset'}: samples must have shape (N, V, L),"
                f" got {self.samples.shape}"
            )

        if self.labels.shape != (self.samples.shape[0],):
            raise DataError(
                f"{self.origin or 'dataset'}: {self.labels.shape[0]} labels for"
                f" {self.samples.shape[0]} samples"
            )

        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= len(self.class_names)
        ):
            raise DataError(
                f"{self.origin or 'dataset'}: label index out of range for"
                f" {len(self.class_names)} classes"
            )

        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"{self.origin or 'dataset'}: samples contain NaN")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_variables(self) -> int:
        return int(self.samples.shape[1])

    @property
    def length(self) -> int:
        return int(self.samples.shape[2])

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.n_classes).tolist()  # type: ignore[no-any-return]

    def subset(self, indices: t.Sequence[int] | np.ndarray) -> TimeSeriesDataset:
        index = np.asarray(indices, dtype=np.int64)
        return TimeSeriesDataset(
            self.samples[index], self.labels[index], list(self.class_names), self.origin
        )

    def normalized(self) -> TimeSeriesDataset:
        """A copy with every sample passed through :func:`znormalize`."""
        samples = np.stack([znormalize(s) for s in self.samples]) if len(self) else self.samples
        return TimeSeriesDataset(samples, self.labels.copy(), list(self.class_names), self.origin)

    def check_compatible(self, other: TimeSeriesDataset) -> None:
        """Raise if the two datasets do not share variables, length, and classes."""
        mine = (self.n_variables, self.length, self.class_names)
        theirs = (other.n_variables, other.length, other.class_names)

        if mine != theirs:
            raise DataError(
                f"{other.origin or 'dataset'} has (V, L, classes) {theirs}, expected"
                f" {mine} from {self.origin or 'the training set'}"
            )


def resample_linear(series: np.ndarray, length: int) -> np.ndarray:
    """Linearly interpolate each channel onto ``length`` equally spaced points
    spanning the original index range. Endpoints are kept exactly, and the series
    is returned unchanged (as a copy) if it already has the target length.

    :param series: Array of shape ``(V, L0)``, or ``(L0,)`` for a single channel.
    :param length: Target length, at least 2.
    """
    values = np.asarray(series, dtype=np.float64)
    source = values.shape[-1]

    if source < 2:
        raise DataError(f"cannot resample a series of length {source}, need at least 2")

    if length < 2:
        raise DataError(f"cannot resample to length {length}, need at least 2")

    if source == length:
        return values.copy()

    old = np.arange(source, dtype=np.float64)
    new = np.linspace(0.0, source - 1.0, length)

    if values.ndim == 1:
        return np.interp(new, old, values)

    return np.stack([np.interp(new, old, channel) for channel in values])


def znormalize(sample: np.ndarray) -> np.ndarray:
    """Standardize each channel of one sample to zero mean and unit (population)
    standard deviation. Channels with standard deviation below 1e-8 are only
    centered.

    :param sample: Array of shape ``(V, L)``.
    """
    values = np.asarray(sample, dtype=np.float64)
    mean = values.mean(axis=-1, keepdims=True)
    std = values.std(axis=-1, keepdims=True)
    centered = values - mean
    return np.where(std < 1e-8, centered, centered / np.where(std < 1e-8, 1.0, std))


def _fill_missing(values: np.ndarray, line: int) -> np.ndarray:
    # Interior gaps are interpolated, leading and trailing gaps copy the nearest
    # observation.
    missing = np.isnan(values)

    if not missing.any():
        return values

    if missing.all():
        raise ParseError("dimension has no observed values", line)

    index = np.arange(values.size)
    filled = values.copy()
    filled[missing] = np.interp(index[missing], index[~missing], values[~missing])
    return filled


_BOOL_DIRECTIVES = {"timestamps", "missing", "univariate", "equallength"}
_KNOWN_DIRECTIVES = _BOOL_DIRECTIVES | {
    "problemname",
    "dimensions",
    "serieslength",
    "classlabel",
    "targetlabel",
    "data",
}


def _parse_bool(name: str, value: str, line: int) -> bool:
    lowered = value.lower()

    if lowered == "true":
        return True

    if lowered == "false":
        return False

    raise ParseError(f"@{name} requires true or false, got '{value}'", line)


def _parse_float(token: str, line: int) -> float:
    token = token.strip()

    if token == "?" or token.lower() == "nan":
        return math.nan

    try:
        return float(token)
    except ValueError:
        raise ParseError(f"non-numeric value '{token}'", line) from None


def parse_ts(text: str, length: int | None = None, origin: str = "<string>") -> TimeSeriesDataset:
    """Parse the text of a UCR/UEA ``.ts`` file.

    The header is a series of ``@`` directives, matched case-insensitively, and
    must include ``@classLabel true`` followed by the label names. Class indices
    follow the order labels are declared in. After ``@data``, each line is one
    record of ``:``-separated dimensions with comma-separated values, ending with
    the class label. Lines starting with ``%`` are comments.

    Missing values (``?``) are interpolated from their neighbors. Records of
    differing lengths are resampled with :func:`resample_linear` to the longest
    observed length, or to ``length`` if given.

    :param text: File contents.
    :param length: Resample every series to this length instead of the longest.
    :param origin: Name used in the dataset's provenance.
    :raises ParseError: The text is malformed. The message names the line.
    """
    class_names: list[str] | None = None
    dimensions: int | None = None
    univariate: bool | None = None
    data_line: int | None = None
    records: list[tuple[int, list[np.ndarray], int]] = []
    last_line = 0

    for number, raw in enumerate(text.splitlines(), start=1):
        last_line = number
        line = raw.strip()

        if not line or line.startswith("%"):
            continue

        if line.startswith("@"):
            if data_line is not None:
                raise ParseError("directive after @data", number)

            tokens = line[1:].split()
            name = tokens[0].lower() if tokens else ""
            args = tokens[1:]

            if name not in _KNOWN_DIRECTIVES:
                logger.debug("%s: ignoring unknown directive @%s", origin, name)
                continue

            if name == "data":
                if args:
                    raise ParseError("@data takes no value", number)

                data_line = number
            elif name in _BOOL_DIRECTIVES:
                if len(args) != 1:
                    raise ParseError(f"@{name} requires one true or false value", number)

                value = _parse_bool(name, args[0], number)

                if name == "univariate":
                    univariate = value
                elif name == "timestamps" and value:
                    raise ParseError("@timeStamps true is not supported", number)
            elif name == "dimensions":
                if len(args) != 1 or not args[0].isdigit() or int(args[0]) < 1:
                    raise ParseError("@dimensions requires a positive integer", number)

                dimensions = int(args[0])
            elif name == "classlabel":
                if not args or not _parse_bool(name, args[0], number):
                    raise ParseError("@classLabel true with label names is required", number)

                if len(args) == 1:
                    raise ParseError("@classLabel true requires label names", number)

                class_names = args[1:]

                if len(set(class_names)) != len(class_names):
                    raise ParseError("@classLabel declares a label twice", number)
            elif name == "targetlabel" and args and _parse_bool(name, args[0], number):
                raise ParseError("regression targets are not supported", number)

            continue

        if data_line is None:
            raise ParseError("record before @data", number)

        if class_names is None:
            raise ParseError("missing @classLabel directive", data_line)

        fields = line.split(":")
        label = fields[-1].strip()
        channels = fields[:-1]

        if dimensions is None:
            dimensions = 1 if univariate else len(channels)

        if len(channels) != dimensions:
            raise ParseError(
                f"record has {len(channels)} dimensions, expected {dimensions}", number
            )

        if label not in class_names:
            raise ParseError(f"undeclared class label '{label}'", number)

        values = []

        for channel in channels:
            if not channel.strip():
                raise ParseError("empty dimension", number)

            parsed = np.array([_parse_float(v, number) for v in channel.split(",")])
            values.append(_fill_missing(parsed, number))

        records.append((number, values, class_names.index(label)))

    if data_line is None:
        raise ParseError("missing @data section", last_line or None)

    if not records:
        raise ParseError("no records after @data", data_line)

    assert class_names is not None and dimensions is not None
    target = length or max(len(v) for _, channels, _ in records for v in channels)
    samples = np.empty((len(records), dimensions, target), dtype=np.float64)

    for i, (number, channels, _) in enumerate(records):
        for j, channel in enumerate(channels):
            try:
                samples[i, j] = resample_linear(channel, target)
            except DataError as e:
                raise ParseError(e.message, number) from None

    labels = np.array([label for _, _, label in records], dtype=np.int64)
    logger.debug(
        "%s: %d records, V=%d, L=%d, C=%d",
        origin,
        len(records),
        dimensions,
        target,
        len(class_names),
    )
    return TimeSeriesDataset(samples, labels, class_names, origin)


def load_ts(path: str | os.PathLike[str], length: int | None = None) -> TimeSeriesDataset:
    """Read and parse a ``.ts`` file, see :func:`parse_ts`."""
    with open(path, encoding="utf-8") as f:
        return parse_ts(f.read(), length=length, origin=os.fspath(path))


def format_ts(dataset: TimeSeriesDataset, problem_name: str) -> str:
    """Write a dataset as ``.ts`` text that :func:`parse_ts` reads back."""
    lines = [
        f"@problemName {problem_name}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if dataset.n_variables == 1 else 'false'}",
        f"@dimensions {dataset.n_variables}",
        "@equalLength true",
        f"@seriesLength {dataset.length}",
        f"@classLabel true {' '.join(dataset.class_names)}",
        "@data",
    ]

    for sample, label in zip(dataset.samples, dataset.labels):
        channels = [",".join(repr(float(v)) for v in channel) for channel in sample]
        lines.append(":".join([*channels, dataset.class_names[label]]))

    return "\n".join(lines) + "\n"


def save_ts(path: str | os.PathLike[str], dataset: TimeSeriesDataset, problem_name: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_ts(dataset, problem_name))


def read_csv(
    path: str | os.PathLike[str],
    n_variables: int,
    length: int,
    class_names: list[str] | None = None,
) -> TimeSeriesDataset:
    """Read a plain CSV file with one sample per row: the label, then ``V * L``
    values in row-major order (all of channel 0, then channel 1, ...).

    :param path: File to read.
    :param n_variables: Number of channels ``V``.
    :param length: Series length ``L``.
    :param class_names: Fixed label order, for a test file that must match its
        training file. By default the sorted distinct labels are used.
    """
    expected = n_variables * length
    rows: list[tuple[str, np.ndarray]] = []

    with open(path, encoding="utf-8", newline="") as f:
        for number, row in enumerate(csv.reader(f), start=1):
            if not row or not "".join(row).strip():
                continue

            values = row[1:]

            if len(values) != expected:
                raise ParseError(
                    f"row has {len(values)} values, expected {expected} (V={n_variables},"
                    f" L={length})",
                    number,
                )

            parsed = np.array([_parse_float(v, number) for v in values])

            if np.isnan(parsed).any():
                raise ParseError("missing values are not supported in CSV input", number)

            rows.append((row[0].strip(), parsed))

    if not rows:
        raise ParseError(f"{os.fspath(path)} has no rows")

    names = class_names if class_names is not None else sorted({label for label, _ in rows})
    unknown = sorted({label for label, _ in rows} - set(names))

    if unknown:
        raise ParseError(f"undeclared class labels {unknown}")

    samples = np.stack([values.reshape(n_variables, length) for _, values in rows])
    labels = np.array([names.index(label) for label, _ in rows], dtype=np.int64)
    return TimeSeriesDataset(samples, labels, list(names), os.fspath(path))


def stratified_indices(
    labels: np.ndarray, n_classes: int, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Choose holdout indices per class. Each class with ``n`` samples contributes
    ``max(1, round(fraction * n))`` samples, rounding halves up, capped at
    ``n - 1`` so the class keeps at least one training sample. Returns sorted
    ``(keep, holdout)`` index arrays that partition ``range(len(labels))``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}.")

    rng = np.random.default_rng(seed)
    holdout: list[np.ndarray] = []

    for c in range(n_classes):
        index = np.flatnonzero(labels == c)

        if index.size == 0:
            continue

        if index.size < 2:
            raise DataError(
                f"class {c} has 1 sample, a validation split needs at least 2 per"
                " class; set validation_fraction to 0 to disable it"
            )

        count = max(1, math.floor(fraction * index.size + 0.5))
        holdout.append(rng.permutation(index)[: min(count, index.size - 1)])

    chosen = np.sort(np.concatenate(holdout)) if holdout else np.empty(0, np.int64)
    mask = np.ones(labels.shape[0], dtype=bool)
    mask[chosen] = False
    return np.flatnonzero(mask), chosen


def stratified_split(
    dataset: TimeSeriesDataset, fraction: float, seed: int
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Split off a class-stratified holdout set, see :func:`stratified_indices`."""
    keep, holdout = stratified_indices(dataset.labels, dataset.n_classes, fraction, seed)
    return dataset.subset(keep), dataset.subset(holdout)


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a seeded sinusoid classification problem. Class ``c`` is a
    sine wave with ``base_frequencies[c]`` cycles per window.
    """

    n_classes: int = 3
    n_train: int = 300
    n_test: int = 300
    n_variables: int = 1
    length: int = 128
    base_frequencies: tuple[float, ...] = (2.0, 5.0, 9.0)
    noise_std: float = 0.3
    seed: int = 2025

    def __post_init__(self) -> None:
        if len(self.base_frequencies) != self.n_classes:
            raise DataError(
                f"{len(self.base_frequencies)} base frequencies for {self.n_classes} classes"
            )

        if len(set(self.base_frequencies)) != len(self.base_frequencies):
            raise DataError("base frequencies must be distinct")

        if min(self.n_classes, self.n_train, self.n_test, self.n_variables) < 1:
            raise DataError("class, sample, and variable counts must be positive")

        if self.length < 2:
            raise DataError("length must be at least 2")

        if self.noise_std < 0:
            raise DataError("noise_std must be nonnegative")


def make_synthetic(spec: SyntheticSpec) -> TimeSeriesDataset:
    """Generate ``n_train + n_test`` samples, training samples first. Labels cycle
    through the classes within each part, so both parts are balanced. Each
    sample and channel gets a uniform random phase, then Gaussian noise is added.
    """
    labels = np.concatenate(
        [np.arange(spec.n_train) % spec.n_classes, np.arange(spec.n_test) % spec.n_classes]
    )
    n = labels.size
    rng = np.random.default_rng(spec.seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n, spec.n_variables, 1))
    noise = rng.standard_normal((n, spec.n_variables, spec.length))
    frequencies = np.asarray(spec.base_frequencies, dtype=np.float64)[labels]
    steps = np.arange(spec.length, dtype=np.float64)
    angle = 2.0 * np.pi * frequencies[:, None, None] * steps / spec.length
    samples = np.sin(angle + phases) + spec.noise_std * noise
    names = [f"f{f:g}" for f in spec.base_frequencies]
    return TimeSeriesDataset(samples, labels, names, f"synthetic(seed={spec.seed})")


def make_synthetic_split(spec: SyntheticSpec) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Generate a synthetic dataset and split it into its training and test parts."""
    dataset = make_synthetic(spec)
    train = dataset.subset(np.arange(spec.n_train))
    test = dataset.subset(np.arange(spec.n_train, len(dataset)))
    return train, test
