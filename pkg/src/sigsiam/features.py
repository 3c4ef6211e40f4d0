"""Subject schema, concatenated feature assembly and median binarisation.

Concatenated feature layout (default truncation levels 3 and 1)::

    region r = 0..69, 18 values each, contiguous:
        area_6m, thickness_6m, area_12m, thickness_12m, 14 signature terms
    volume_6m, volume_12m, 1 volume signature term
    gender one-hot (male, female)

70 * 18 + 3 + 2 = 1265 values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import atlas
from .errors import InsufficientDataError, SchemaError
from .sigcore import linear_signature_terms, term_count

LABELS = ("ASD", "NC")
GENDERS = ("male", "female")
_CSV_GENDER = {"M": "male", "F": "female"}
N_REGIONS = atlas.N_REGIONS
CORTICAL_ARRAYS = ("area_6m", "thickness_6m", "area_12m", "thickness_12m")


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    label: str
    gender: str
    area_6m: np.ndarray
    area_12m: np.ndarray
    thickness_6m: np.ndarray
    thickness_12m: np.ndarray
    volume_6m: float
    volume_12m: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise SchemaError(f"{self.subject_id}: label must be one of {LABELS}, got {self.label!r}")
        if self.gender not in GENDERS:
            raise SchemaError(f"{self.subject_id}: gender must be one of {GENDERS}, got {self.gender!r}")
        for name in CORTICAL_ARRAYS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (N_REGIONS,):
                raise SchemaError(f"{self.subject_id}: {name} needs {N_REGIONS} values, got shape {arr.shape}")
            if not (np.all(np.isfinite(arr)) and np.all(arr > 0)):
                raise SchemaError(f"{self.subject_id}: {name} must be finite and strictly positive")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("volume_6m", "volume_12m"):
            value = float(getattr(self, name))
            if not (np.isfinite(value) and value > 0):
                raise SchemaError(f"{self.subject_id}: {name} must be finite and strictly positive")
            object.__setattr__(self, name, value)

    @property
    def is_asd(self) -> bool:
        return self.label == "ASD"


@dataclass(frozen=True)
class FeatureLayout:
    """Index map of the concatenated feature vector."""

    cortical_level: int = 3
    volume_level: int = 1

    @property
    def cortical_ps_width(self) -> int:
        return term_count(2, self.cortical_level)

    @property
    def region_width(self) -> int:
        return len(CORTICAL_ARRAYS) + self.cortical_ps_width

    @property
    def volume_width(self) -> int:
        return 2 + self.volume_level

    @property
    def volume_start(self) -> int:
        return N_REGIONS * self.region_width

    @property
    def gender_start(self) -> int:
        return self.volume_start + self.volume_width

    @property
    def dim(self) -> int:
        return self.gender_start + len(GENDERS)

    def region_slice(self, r: int) -> slice:
        start = r * self.region_width
        return slice(start, start + self.region_width)

    def volume_slice(self) -> slice:
        return slice(self.volume_start, self.gender_start)

    def gender_slice(self) -> slice:
        return slice(self.gender_start, self.dim)

    @cached_property
    def ps_mask(self) -> np.ndarray:
        """True at every path-signature term (cortical and volume)."""
        mask = np.zeros(self.dim, dtype=bool)
        for r in range(N_REGIONS):
            start = r * self.region_width + len(CORTICAL_ARRAYS)
            mask[start : start + self.cortical_ps_width] = True
        mask[self.volume_start + 2 : self.gender_start] = True
        return mask

    @cached_property
    def gender_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        mask[self.gender_slice()] = True
        return mask

    def group_of(self) -> np.ndarray:
        """Group id per index: 0..69 regions, 70 volume, 71 gender."""
        groups = np.empty(self.dim, dtype=int)
        for r in range(N_REGIONS):
            groups[self.region_slice(r)] = r
        groups[self.volume_slice()] = N_REGIONS
        groups[self.gender_slice()] = N_REGIONS + 1
        return groups

    def to_dict(self) -> dict:
        return {"cortical_level": self.cortical_level, "volume_level": self.volume_level}


DEFAULT_LAYOUT = FeatureLayout()


def assemble_features(
    records: Sequence[SubjectRecord], layout: FeatureLayout = DEFAULT_LAYOUT
) -> np.ndarray:
    """Stack concatenated features of ``records`` into an ``(n, layout.dim)`` matrix."""
    n = len(records)
    out = np.empty((n, layout.dim))
    if n == 0:
        return out
    a6 = np.stack([r.area_6m for r in records])
    t6 = np.stack([r.thickness_6m for r in records])
    a12 = np.stack([r.area_12m for r in records])
    t12 = np.stack([r.thickness_12m for r in records])
    start = np.stack([a6, t6], axis=-1)  # (n, 70, 2)
    end = np.stack([a12, t12], axis=-1)
    ps = linear_signature_terms(start, end, layout.cortical_level)  # (n, 70, w)
    regions = np.concatenate([a6[..., None], t6[..., None], a12[..., None], t12[..., None], ps], axis=-1)
    out[:, : layout.volume_start] = regions.reshape(n, -1)

    v6 = np.array([r.volume_6m for r in records])
    v12 = np.array([r.volume_12m for r in records])
    vps = linear_signature_terms(v6[:, None], v12[:, None], layout.volume_level)
    out[:, layout.volume_start] = v6
    out[:, layout.volume_start + 1] = v12
    out[:, layout.volume_start + 2 : layout.gender_start] = vps

    male = np.array([r.gender == "male" for r in records], dtype=float)
    out[:, layout.gender_start] = male
    out[:, layout.gender_start + 1] = 1.0 - male
    return out


def assemble_feature(record: SubjectRecord, layout: FeatureLayout = DEFAULT_LAYOUT) -> np.ndarray:
    if not isinstance(record, SubjectRecord):
        raise SchemaError("assemble_feature expects a SubjectRecord")
    return assemble_features([record], layout)[0]


@dataclass(frozen=True)
class BinarizationThresholds:
    medians: np.ndarray

    def __post_init__(self):
        medians = np.asarray(self.medians, dtype=float)
        if medians.ndim != 1:
            raise SchemaError("thresholds must be a flat vector")
        medians.setflags(write=False)
        object.__setattr__(self, "medians", medians)

    def __len__(self) -> int:
        return self.medians.size


def fit_thresholds(train: np.ndarray | Sequence[np.ndarray]) -> BinarizationThresholds:
    """Per-dimension median of the training vectors (even count: mean of the middle two)."""
    x = np.asarray(train, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("need at least 2 training vectors to fit thresholds")
    return BinarizationThresholds(np.median(x, axis=0))


def binarize(v: np.ndarray, thresholds: BinarizationThresholds) -> np.ndarray:
    """1.0 where a value is strictly above its threshold, else 0.0.

    Works on a single vector or a stack of row vectors.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != len(thresholds):
        raise SchemaError(f"vector length {v.shape[-1]} != threshold length {len(thresholds)}")
    return (v > thresholds.medians).astype(float)


@dataclass(frozen=True)
class MinMaxScaling:
    """Train-fitted [0, 1] rescaling used when binarisation is ablated."""

    low: np.ndarray
    high: np.ndarray

    def transform(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.low.size:
            raise SchemaError(f"vector length {v.shape[-1]} != scaling length {self.low.size}")
        span = self.high - self.low
        safe = np.where(span > 0, span, 1.0)
        return np.clip(np.where(span > 0, (v - self.low) / safe, 0.0), 0.0, 1.0)


def fit_minmax(train: np.ndarray) -> MinMaxScaling:
    x = np.asarray(train, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("need at least 2 training vectors to fit scaling")
    return MinMaxScaling(x.min(axis=0), x.max(axis=0))


# --- synthetic cohorts -------------------------------------------------------

# Regions carrying the group difference (lh and rh of each name).
SIGNAL_REGION_NAMES = (
    "superiortemporal",
    "middletemporal",
    "fusiform",
    "lateraloccipital",
    "inferiorparietal",
    "precuneus",
)
SIGNAL_REGIONS = tuple(
    i for i, (_, name) in enumerate(atlas.REGIONS) if name in SIGNAL_REGION_NAMES
)

_TEMPLATE_SEED = 20_190_601
# log-space standard deviations
_SD_GLOBAL = 0.05
_SD_AREA = 0.10
_SD_AREA_GROWTH = 0.06
_SD_THICK = 0.06
_SD_THICK_GROWTH = 0.03
_SD_VOLUME = 0.05
_SD_VOLUME_GROWTH = 0.04
_MEAN_AREA_GROWTH = np.log(1.35)
_MEAN_THICK_GROWTH = np.log(1.08)
_MEAN_VOLUME_GROWTH = np.log(1.30)
_P_MALE = 102 / 157


def _template() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(_TEMPLATE_SEED)
    area = rng.uniform(300.0, 2500.0, N_REGIONS)  # mm^2 at 6 months
    thickness = rng.uniform(1.8, 3.2, N_REGIONS)  # mm
    return area, thickness


def generate_synthetic_cohort(
    n_asd: int, n_nc: int, effect_size: float, seed: int
) -> list[SubjectRecord]:
    """Draw a two-timepoint cohort with a controllable group difference.

    Morphology is log-normal around a fixed regional template, with a shared
    per-subject brain-size factor.  ASD subjects get ``effect_size``
    within-group standard deviations added to the 6-month surface area and
    to the 6-to-12-month area growth rate of every region in
    ``SIGNAL_REGIONS``.  Gender is drawn independently of the label.
    ASD subjects come first, then NC.
    """
    if n_asd < 1 or n_nc < 1:
        raise SchemaError("both groups need at least one subject")
    if effect_size < 0:
        raise SchemaError("effect_size must be >= 0")
    base_area, base_thick = _template()
    rng = np.random.default_rng(seed)
    signal = np.zeros(N_REGIONS)
    signal[list(SIGNAL_REGIONS)] = 1.0
    sd_area_total = np.hypot(_SD_GLOBAL, _SD_AREA)

    records = []
    labels = ["ASD"] * n_asd + ["NC"] * n_nc
    for idx, label in enumerate(labels):
        shift = effect_size * signal if label == "ASD" else np.zeros(N_REGIONS)
        g = rng.normal(0.0, _SD_GLOBAL)
        log_a6 = np.log(base_area) + g + rng.normal(0.0, _SD_AREA, N_REGIONS) + shift * sd_area_total
        log_ga = _MEAN_AREA_GROWTH + rng.normal(0.0, _SD_AREA_GROWTH, N_REGIONS) + shift * _SD_AREA_GROWTH
        log_t6 = np.log(base_thick) + rng.normal(0.0, _SD_THICK, N_REGIONS)
        log_gt = _MEAN_THICK_GROWTH + rng.normal(0.0, _SD_THICK_GROWTH, N_REGIONS)
        log_v6 = np.log(6.5e5) + 3.0 * g + rng.normal(0.0, _SD_VOLUME)
        log_gv = _MEAN_VOLUME_GROWTH + rng.normal(0.0, _SD_VOLUME_GROWTH)
        gender = "male" if rng.random() < _P_MALE else "female"
        records.append(
            SubjectRecord(
                subject_id=f"S{idx:04d}",
                label=label,
                gender=gender,
                area_6m=np.exp(log_a6),
                area_12m=np.exp(log_a6 + log_ga),
                thickness_6m=np.exp(log_t6),
                thickness_12m=np.exp(log_t6 + log_gt),
                volume_6m=float(np.exp(log_v6)),
                volume_12m=float(np.exp(log_v6 + log_gv)),
            )
        )
    return records


# --- CSV interface -------------------------------------------------------------

def csv_columns() -> list[str]:
    cols = ["subject_id", "label", "gender", "volume_6m", "volume_12m"]
    for name in CORTICAL_ARRAYS:
        cols += [f"{name}_r{r:02d}" for r in range(N_REGIONS)]
    return cols


class CohortParseError(SchemaError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.row = row
        self.column = column


def format_cohort_csv(records: Iterable[SubjectRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_columns())
    inv_gender = {v: k for k, v in _CSV_GENDER.items()}
    for rec in records:
        row = [rec.subject_id, rec.label, inv_gender[rec.gender], repr(rec.volume_6m), repr(rec.volume_12m)]
        for name in CORTICAL_ARRAYS:
            row += [repr(float(x)) for x in getattr(rec, name)]
        writer.writerow(row)
    return buf.getvalue()


def parse_cohort_csv(text: str) -> list[SubjectRecord]:
    """Parse the subject CSV; errors name the 1-based data row and column."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CohortParseError("empty file") from None
    expected = csv_columns()
    missing = [c for c in expected if c not in header]
    if missing:
        raise CohortParseError(f"missing columns: {', '.join(missing[:5])}{' ...' if len(missing) > 5 else ''}")
    pos = {c: header.index(c) for c in expected}

    records = []
    for rownum, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise CohortParseError(f"expected {len(header)} fields, got {len(row)}", row=rownum)

        def number(col: str) -> float:
            try:
                return float(row[pos[col]])
            except ValueError:
                raise CohortParseError(f"not a number: {row[pos[col]]!r}", rownum, col) from None

        gender_raw = row[pos["gender"]].strip()
        if gender_raw not in _CSV_GENDER:
            raise CohortParseError(f"gender must be M or F, got {gender_raw!r}", rownum, "gender")
        label = row[pos["label"]].strip()
        if label not in LABELS:
            raise CohortParseError(f"label must be ASD or NC, got {label!r}", rownum, "label")
        arrays = {
            name: np.array([number(f"{name}_r{r:02d}") for r in range(N_REGIONS)])
            for name in CORTICAL_ARRAYS
        }
        try:
            records.append(
                SubjectRecord(
                    subject_id=row[pos["subject_id"]].strip(),
                    label=label,
                    gender=_CSV_GENDER[gender_raw],
                    volume_6m=number("volume_6m"),
                    volume_12m=number("volume_12m"),
                    **arrays,
                )
            )
        except SchemaError as exc:
            raise CohortParseError(str(exc), row=rownum) from None
    return records


def read_cohort_csv(path: str | Path) -> list[SubjectRecord]:
    return parse_cohort_csv(Path(path).read_text(encoding="utf-8"))
