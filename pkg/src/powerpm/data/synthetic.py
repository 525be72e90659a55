"""Deterministic synthetic hierarchical load data.

Users are a mixture of daily/weekly sinusoids with an archetype profile
(residential morning/evening peaks vs. industrial daytime plateau), a
temperature/weather response, and Gaussian noise. District series are the
exact sum of their users and city series the exact sum of their districts,
so aggregation consistency is testable to zero error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from powerpm.data.exogenous import DEFAULT_WEATHER_VOCABULARY
from powerpm.data.series import InstanceSeries, Level
from powerpm.errors import ConfigError

DAY_SECONDS = 86_400
WEEK_SECONDS = 7 * DAY_SECONDS

_WEATHER_LOAD_BUMP = {"sunny": 0.0, "cloudy": 0.02, "rainy": 0.05, "storm": 0.08}


@dataclass(frozen=True)
class SynthConfig:
    n_cities: int = 1
    districts_per_city: int = 4
    users_per_district: int = 8
    num_points: int = 96 * 90
    frequency_seconds: int = 900
    seed: int = 0
    noise_std: float = 0.05
    # City-wide mean-reverting activity factor multiplying every user's
    # profile: a macro state observable through aggregates.
    regional_factor_std: float = 0.0
    regional_factor_hours: float = 6.0
    anomaly_fraction: float = 0.0
    start_epoch: int = 1_672_531_200  # 2023-01-01T00:00:00Z

    def __post_init__(self):
        for name in ("n_cities", "districts_per_city", "users_per_district", "num_points"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", key_path=f"synth.{name}")
        if self.frequency_seconds < 1:
            raise ConfigError("frequency_seconds must be >= 1", key_path="synth.frequency_seconds")
        if not 0.0 <= self.anomaly_fraction <= 1.0:
            raise ConfigError("anomaly_fraction must be in [0, 1]", key_path="synth.anomaly_fraction")


@dataclass
class ExogenousSeries:
    """Per-city ground-truth exogenous observations, aligned to the load grid."""

    region_id: str
    timestamps: np.ndarray
    weather_labels: list[str]
    temp_max: np.ndarray
    temp_min: np.ndarray


@dataclass
class UserLabels:
    archetype: str            # "residential" | "industrial"
    anomaly: bool


@dataclass
class SynthDataset:
    instances: list[InstanceSeries]
    exogenous: dict[str, ExogenousSeries]
    user_labels: dict[str, UserLabels] = field(default_factory=dict)

    def by_id(self) -> dict[str, InstanceSeries]:
        return {s.instance_id: s for s in self.instances}


def _residential_profile(day_phase: np.ndarray) -> np.ndarray:
    morning = np.exp(-((day_phase - 0.33) / 0.07) ** 2)
    evening = 0.9 * np.exp(-((day_phase - 0.83) / 0.09) ** 2)
    return morning + evening


def _industrial_profile(day_phase: np.ndarray, weekday: np.ndarray) -> np.ndarray:
    plateau = 1.0 / (1.0 + np.exp(-(day_phase - 0.33) / 0.02))
    plateau *= 1.0 / (1.0 + np.exp(-(0.75 - day_phase) / 0.02))
    weekend = np.where(weekday >= 5, 0.35, 1.0)
    return plateau * weekend


def _city_exogenous(city_id: str, timestamps: np.ndarray, rng: np.random.Generator) -> ExogenousSeries:
    t = timestamps.astype(np.float64)
    day_phase = (t % DAY_SECONDS) / DAY_SECONDS
    year_phase = (t % (365.0 * DAY_SECONDS)) / (365.0 * DAY_SECONDS)
    base = 12.0 + 10.0 * np.sin(2 * np.pi * (year_phase - 0.25)) + rng.uniform(-3.0, 3.0)
    daily_swing = 5.0 * np.sin(2 * np.pi * (day_phase - 0.3))
    temp_mid = base + daily_swing + rng.normal(0.0, 0.4, size=len(t))
    spread = 2.0 + 2.0 * rng.random(size=len(t))

    # Weather persists within a day and tends to persist across days.
    vocab = DEFAULT_WEATHER_VOCABULARY
    day_index = ((timestamps - timestamps[0]) // DAY_SECONDS).astype(np.int64)
    daily_weather = []
    current = vocab[int(rng.integers(len(vocab)))]
    for _ in range(int(day_index.max()) + 1):
        if rng.random() > 0.6:
            current = vocab[int(rng.integers(len(vocab)))]
        daily_weather.append(current)
    labels = [daily_weather[i] for i in day_index]
    return ExogenousSeries(
        region_id=city_id,
        timestamps=timestamps.copy(),
        weather_labels=labels,
        temp_max=temp_mid + spread / 2.0,
        temp_min=temp_mid - spread / 2.0,
    )


def _regional_factor(
    n_points: int, frequency_seconds: int, std: float, tau_hours: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Ornstein-Uhlenbeck activity factor around 1.0 with timescale tau."""
    if std <= 0:
        return np.ones(n_points)
    alpha = np.exp(-frequency_seconds / (tau_hours * 3600.0))
    innovations = rng.normal(0.0, std * np.sqrt(1 - alpha * alpha), size=n_points)
    f = np.empty(n_points)
    f[0] = rng.normal(0.0, std)
    for k in range(1, n_points):
        f[k] = alpha * f[k - 1] + innovations[k]
    return 1.0 + f


def _user_values(
    timestamps: np.ndarray,
    exo: ExogenousSeries,
    archetype: str,
    rng: np.random.Generator,
    noise_std: float,
    regional: np.ndarray,
) -> np.ndarray:
    t = timestamps.astype(np.float64)
    day_phase = (t % DAY_SECONDS) / DAY_SECONDS
    week_phase = (t % WEEK_SECONDS) / WEEK_SECONDS
    weekday = (timestamps // DAY_SECONDS) % 7

    base = rng.uniform(0.6, 1.4)
    amp = rng.uniform(0.6, 1.4)
    weekly = 1.0 + 0.15 * np.sin(2 * np.pi * week_phase + rng.uniform(0, 2 * np.pi))
    if archetype == "residential":
        profile = _residential_profile((day_phase + rng.uniform(-0.02, 0.02)) % 1.0)
    else:
        profile = _industrial_profile(day_phase, weekday)

    temp_mid = (exo.temp_max + exo.temp_min) / 2.0
    comfort = rng.uniform(0.1, 0.35)
    thermal = comfort * (np.maximum(temp_mid - 24.0, 0.0) + np.maximum(8.0 - temp_mid, 0.0)) / 10.0
    weather_bump = amp * np.array([_WEATHER_LOAD_BUMP[w] for w in exo.weather_labels])

    noise = rng.normal(0.0, noise_std, size=len(t))
    return (base + amp * profile * weekly) * regional + thermal + weather_bump + noise


def _inject_anomaly(values: np.ndarray, timestamps: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Theft-like suppression: a few multi-day segments scaled toward zero."""
    out = values.copy()
    n = len(out)
    points_per_day = max(1, DAY_SECONDS // int(timestamps[1] - timestamps[0])) if n > 1 else 1
    for _ in range(int(rng.integers(2, 5))):
        span = int(rng.integers(2, 6)) * points_per_day
        start = int(rng.integers(0, max(1, n - span)))
        out[start:start + span] *= rng.uniform(0.15, 0.4)
    return out


def synth_generate(config: SynthConfig) -> SynthDataset:
    """Generate a deterministic hierarchical corpus for the given config."""
    root = np.random.SeedSequence(config.seed)
    timestamps = config.start_epoch + np.arange(config.num_points, dtype=np.int64) * config.frequency_seconds

    n_users_total = config.n_cities * config.districts_per_city * config.users_per_district
    label_rng = np.random.Generator(np.random.PCG64(root.spawn(1)[0]))
    n_anomalous = int(np.floor(config.anomaly_fraction * n_users_total))
    anomalous = set(label_rng.choice(n_users_total, size=n_anomalous, replace=False).tolist())

    instances: list[InstanceSeries] = []
    exogenous: dict[str, ExogenousSeries] = {}
    user_labels: dict[str, UserLabels] = {}
    user_counter = 0

    for ci in range(config.n_cities):
        city_id = f"city{ci:02d}"
        city_seq, *district_seqs = root.spawn(1 + config.districts_per_city)
        city_rng = np.random.Generator(np.random.PCG64(city_seq))
        exo = _city_exogenous(city_id, timestamps, city_rng)
        exogenous[city_id] = exo
        regional = _regional_factor(
            config.num_points, config.frequency_seconds,
            config.regional_factor_std, config.regional_factor_hours, city_rng,
        )

        district_values = []
        for di, district_seq in enumerate(district_seqs):
            district_id = f"{city_id}-d{di:02d}"
            user_values = []
            for ui, user_seq in enumerate(district_seq.spawn(config.users_per_district)):
                user_id = f"{district_id}-u{ui:03d}"
                user_rng = np.random.Generator(np.random.PCG64(user_seq))
                archetype = "residential" if user_rng.random() < 0.65 else "industrial"
                values = _user_values(
                    timestamps, exo, archetype, user_rng, config.noise_std, regional
                )
                is_anomalous = user_counter in anomalous
                if is_anomalous:
                    values = _inject_anomaly(values, timestamps, user_rng)
                user_counter += 1
                user_labels[user_id] = UserLabels(archetype=archetype, anomaly=is_anomalous)
                user_values.append(values)
                instances.append(
                    InstanceSeries(
                        instance_id=user_id,
                        level=Level.USER,
                        parent_id=district_id,
                        timestamps=timestamps,
                        values=values,
                        frequency_seconds=config.frequency_seconds,
                    )
                )
            d_values = np.stack(user_values).sum(axis=0)
            district_values.append(d_values)
            instances.append(
                InstanceSeries(
                    instance_id=district_id,
                    level=Level.DISTRICT,
                    parent_id=city_id,
                    timestamps=timestamps,
                    values=d_values,
                    frequency_seconds=config.frequency_seconds,
                )
            )
        instances.append(
            InstanceSeries(
                instance_id=city_id,
                level=Level.CITY,
                parent_id=None,
                timestamps=timestamps,
                values=np.stack(district_values).sum(axis=0),
                frequency_seconds=config.frequency_seconds,
            )
        )
    return SynthDataset(instances=instances, exogenous=exogenous, user_labels=user_labels)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_synth_dataset(dataset: SynthDataset, out_dir: str | Path) -> Path:
    """Write one CSV per instance, a manifest, and the exogenous sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest_rows = []
    for s in sorted(dataset.instances, key=lambda s: s.instance_id):
        with open(out / f"{s.instance_id}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "load_kwh"])
            for t, v in zip(s.timestamps.tolist(), s.values.tolist()):
                w.writerow([t, _fmt(v)])
        labels = dataset.user_labels.get(s.instance_id)
        manifest_rows.append([
            s.instance_id,
            s.level.value,
            s.parent_id or "",
            s.frequency_seconds,
            labels.archetype if labels else "",
            int(labels.anomaly) if labels else "",
        ])

    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "level", "parent_id", "frequency_seconds", "archetype", "anomaly"])
        w.writerows(manifest_rows)

    with open(out / "exogenous.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "region_id", "weather_label", "temp_max", "temp_min"])
        for region_id in sorted(dataset.exogenous):
            exo = dataset.exogenous[region_id]
            for i, t in enumerate(exo.timestamps.tolist()):
                w.writerow([t, region_id, exo.weather_labels[i], _fmt(exo.temp_max[i]), _fmt(exo.temp_min[i])])
    return out


def load_synth_dataset(path: str | Path) -> SynthDataset:
    """Read a directory written by :func:`write_synth_dataset`."""
    root = Path(path)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv under {root}")

    instances = []
    user_labels: dict[str, UserLabels] = {}
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            inst_file = root / f"{row['instance_id']}.csv"
            timestamps, values = [], []
            with open(inst_file, newline="") as ifh:
                for r in csv.DictReader(ifh):
                    timestamps.append(int(r["timestamp"]))
                    values.append(float(r["load_kwh"]))
            instances.append(
                InstanceSeries(
                    instance_id=row["instance_id"],
                    level=Level(row["level"]),
                    parent_id=row["parent_id"] or None,
                    timestamps=np.array(timestamps, dtype=np.int64),
                    values=np.array(values, dtype=np.float64),
                    frequency_seconds=int(row["frequency_seconds"]),
                )
            )
            if row["level"] == "user":
                user_labels[row["instance_id"]] = UserLabels(
                    archetype=row["archetype"], anomaly=bool(int(row["anomaly"] or 0))
                )

    exogenous = read_exogenous_sidecar(root / "exogenous.csv")
    return SynthDataset(instances=instances, exogenous=exogenous, user_labels=user_labels)


def read_exogenous_sidecar(path: str | Path) -> dict[str, ExogenousSeries]:
    """Read a (timestamp, region_id, weather_label, temp_max, temp_min) CSV."""
    path = Path(path)
    exogenous: dict[str, ExogenousSeries] = {}
    if not path.exists():
        return exogenous
    rows_by_region: dict[str, list] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows_by_region.setdefault(r["region_id"], []).append(r)
    for region_id, rows in rows_by_region.items():
        exogenous[region_id] = ExogenousSeries(
            region_id=region_id,
            timestamps=np.array([int(r["timestamp"]) for r in rows], dtype=np.int64),
            weather_labels=[r["weather_label"] for r in rows],
            temp_max=np.array([float(r["temp_max"]) for r in rows]),
            temp_min=np.array([float(r["temp_min"]) for r in rows]),
        )
    return exogenous
