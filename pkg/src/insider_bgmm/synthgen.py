"""Seeded synthetic organization: five domain CSVs with injected exfiltration days.

Each user owns ``behaviors_per_user`` behaviour regimes.  A regime fixes the
expected count of every body token type (Http, Email, File, Connect) and a
preferred relative position in the day for each type.  Normal days pick one
of the user's regimes; anomalous days use an exfiltration regime that adds
File, Email and Connect activity late in the day.  Counts are Poisson, so
``separation`` is measured in Poisson standard deviations of the shifted
token counts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConfigError
from .ingest import DOMAINS, EventToken, UserDaySequence, write_labels

BODY_TOKENS = (EventToken.HTTP, EventToken.EMAIL, EventToken.FILE, EventToken.CONNECT)
START_DATE = date(2010, 1, 4)

# unit shifts defining up to five distinct regimes in (Http, Email, File) count space
_REGIME_SHIFTS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 1.0],
    ]
)
_BASE_POSITION = np.array([0.5, 0.35, 0.5, 0.6])
_ANOMALY_POSITION = np.array([0.3, 0.85, 0.7, 0.9])
_CONNECT_RATE = 0.2
_ACTIVE_PROB = 0.9


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 50
    n_days: int = 200
    behaviors_per_user: int = 3
    anomaly_users: int = 5
    anomaly_days_per_user: int = 3
    seed: int = 0
    separation: float = 4.0
    base_rate: float = 2.0

    def __post_init__(self) -> None:
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if self.n_days < 1:
            raise ConfigError("n_days must be >= 1")
        if not 1 <= self.behaviors_per_user <= len(_REGIME_SHIFTS):
            raise ConfigError(f"behaviors_per_user must be in [1, {len(_REGIME_SHIFTS)}]")
        if not 0 <= self.anomaly_users <= self.n_users:
            raise ConfigError("anomaly_users must be in [0, n_users]")
        if self.anomaly_days_per_user < 0 or (self.anomaly_users > 0 and self.anomaly_days_per_user > self.n_days):
            raise ConfigError("anomaly_days_per_user must be in [0, n_days]")
        if not self.separation > 0:
            raise ConfigError("separation must be > 0")
        if not self.base_rate > 0:
            raise ConfigError("base_rate must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    regime_rates: np.ndarray  # (R, 4) expected counts of BODY_TOKENS
    regime_weights: np.ndarray  # (R,)
    anomaly_rates: np.ndarray  # (4,)

    def to_dict(self) -> dict:
        return {
            "user": self.user_id,
            "regime_rates": self.regime_rates.tolist(),
            "regime_weights": self.regime_weights.tolist(),
            "anomaly_rates": self.anomaly_rates.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> UserProfile:
        return cls(
            data["user"],
            np.array(data["regime_rates"]),
            np.array(data["regime_weights"]),
            np.array(data["anomaly_rates"]),
        )


def user_id(i: int) -> str:
    return f"U{i:04d}"


def _profiles(config: SynthConfig, rng: np.random.Generator) -> list[UserProfile]:
    out = []
    r = config.behaviors_per_user
    for i in range(config.n_users):
        base = rng.uniform(0.7, 1.3, size=3) * config.base_rate
        shifts = _REGIME_SHIFTS[:r] * config.separation * np.sqrt(base)
        rates = np.column_stack([base + shifts, np.full(r, _CONNECT_RATE)])
        weights = rng.dirichlet(np.full(r, 4.0)) if r > 1 else np.ones(1)
        # exfiltration: File, Email and Connect beyond every normal regime
        top = rates.max(axis=0)
        boost = config.separation * np.sqrt(top + 1.0)
        anomaly = top + np.array([0.0, 1.0, 1.5, 1.0]) * boost
        out.append(UserProfile(user_id(i), rates, weights, anomaly))
    return out


_INSTANCE_TOKENS = BODY_TOKENS + (EventToken.DISCONNECT,)
_JITTER = 0.15


def _user_days(
    rates: np.ndarray, positions: np.ndarray, rng: np.random.Generator
) -> list[tuple[EventToken, ...]]:
    """Token strings for a block of days; ``rates`` and ``positions`` are (days, 4).

    Each body event gets a jittered position in [0, 1] around its type's
    preferred position and the day is read in position order, bracketed by
    Logon and Logoff.  Every Connect is followed shortly by a Disconnect.
    """
    n_days, n_types = rates.shape
    counts = rng.poisson(rates)
    day = np.repeat(np.repeat(np.arange(n_days), n_types), counts.ravel())
    kind = np.repeat(np.tile(np.arange(n_types), n_days), counts.ravel())
    pos = np.clip(positions[day, kind] + _JITTER * rng.standard_normal(day.size), 0.0, 1.0)
    conn = kind == 3
    day = np.concatenate([day, day[conn]])
    kind = np.concatenate([kind, np.full(int(conn.sum()), 4)])
    pos = np.concatenate([pos, np.minimum(pos[conn] + 0.02, 1.0)])
    # stable: clipped ties keep generation order, so Connect precedes its Disconnect
    order = np.lexsort((pos, day))
    kinds = kind[order].tolist()
    bounds = np.concatenate([[0], np.cumsum(np.bincount(day, minlength=n_days))]).tolist()
    return [
        (EventToken.LOGON, *(_INSTANCE_TOKENS[k] for k in kinds[a:b]), EventToken.LOGOFF)
        for a, b in zip(bounds[:-1], bounds[1:])
    ]


def _seconds(n: int, rng: np.random.Generator) -> np.ndarray:
    """Strictly increasing second-of-day offsets for ``n`` events, within 07:00-23:00."""
    start = 7 * 3600 + int(rng.integers(0, 3600))
    gaps = rng.integers(1, max(2, (15 * 3600) // max(n, 1)), size=n)
    return start + np.cumsum(gaps)


def simulate(config: SynthConfig) -> tuple[list[UserDaySequence], list[UserProfile], dict[tuple[str, date], int]]:
    """Generate labelled user-day sequences without touching disk.

    Returns ``(sequences, profiles, regimes)`` where ``regimes`` maps each
    user-day to its regime index, ``-1`` marking an injected anomaly.
    """
    rng = np.random.default_rng(config.seed)
    profiles = _profiles(config, rng)
    anomalous = set()
    for u in rng.choice(config.n_users, size=config.anomaly_users, replace=False):
        for d in rng.choice(config.n_days, size=config.anomaly_days_per_user, replace=False):
            anomalous.add((int(u), int(d)))

    sequences = []
    regimes = {}
    for ui, prof in enumerate(profiles):
        active = rng.random(config.n_days) < _ACTIVE_PROB
        if not active.any():
            # every user appears in the logs at least once
            active[rng.integers(config.n_days)] = True
        choice = rng.choice(len(prof.regime_weights), size=config.n_days, p=prof.regime_weights)
        bad = np.array([(ui, d) in anomalous for d in range(config.n_days)], dtype=bool)
        days = np.flatnonzero(active | bad)
        regime = np.where(bad[days], -1, choice[days])
        rates = np.where(bad[days, None], prof.anomaly_rates, prof.regime_rates[choice[days]])
        positions = np.where(bad[days, None], _ANOMALY_POSITION, _BASE_POSITION)
        for d, r, tokens in zip(days.tolist(), regime.tolist(), _user_days(rates, positions, rng)):
            day = START_DATE + timedelta(days=d)
            regimes[(prof.user_id, day)] = r
            sequences.append(UserDaySequence(prof.user_id, day, tokens, r == -1))
    return sequences, profiles, regimes


_DOMAIN_OF = {
    EventToken.LOGON: "logon",
    EventToken.LOGOFF: "logon",
    EventToken.CONNECT: "device",
    EventToken.DISCONNECT: "device",
    EventToken.HTTP: "http",
    EventToken.EMAIL: "email",
    EventToken.FILE: "file",
}
_HEADERS = {
    "logon": ["id", "date", "user", "pc", "activity"],
    "device": ["id", "date", "user", "pc", "activity"],
    "http": ["id", "date", "user", "pc", "url"],
    "email": ["id", "date", "user", "pc", "to", "size"],
    "file": ["id", "date", "user", "pc", "filename"],
}


def generate_org(config: SynthConfig, out_dir: str | Path) -> dict:
    """Write the five domain CSVs, label sidecar, ground truth and manifest.

    Returns the manifest (also written to ``manifest.json``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sequences, profiles, regimes = simulate(config)
    # timestamps come from a second stream so token content is independent of them
    rng = np.random.default_rng([config.seed, 1])

    # flat per-event columns in generation order
    lengths = [len(seq.tokens) for seq in sequences]
    seconds = np.concatenate([_seconds(n, rng) for n in lengths]) if sequences else np.zeros(0, dtype=np.int64)
    owner = np.repeat(np.arange(len(sequences)), lengths)
    tokens = [tok for seq in sequences for tok in seq.tokens]
    domain = np.array([DOMAINS.index(_DOMAIN_OF[tok]) for tok in tokens], dtype=np.int64)
    ordinal = np.array([seq.day.toordinal() for seq in sequences], dtype=np.int64)
    prefixes = [seq.day.strftime("%m/%d/%Y") + " " for seq in sequences]
    pcs = [f"PC-{int(seq.user_id[1:]) % 9000 + 1000}" for seq in sequences]
    clock = {s: f"{s // 3600:02d}:{s % 3600 // 60:02d}:{s % 60:02d}" for s in np.unique(seconds).tolist()}

    files = {}
    for di, dom in enumerate(DOMAINS):
        idx = np.flatnonzero(domain == di)
        # event numbers follow generation order; files are sorted by time, number breaking ties
        order = np.lexsort((np.arange(idx.size), seconds[idx], ordinal[owner[idx]]))
        idx = idx[order].tolist()
        numbers = (order + 1).tolist()
        owners = owner[idx].tolist()
        secs = seconds[idx].tolist()
        letter = dom[0].upper()
        eids = [f"{{{letter}{n:09d}}}" for n in numbers]
        columns = [
            eids,
            [prefixes[o] + clock[s] for o, s in zip(owners, secs)],
            [sequences[o].user_id for o in owners],
            [pcs[o] for o in owners],
        ]
        if dom in ("logon", "device"):
            columns.append([tokens[i].value for i in idx])
        elif dom == "http":
            columns.append([f"http://site{n % 97}.example.com/page" for n in numbers])
        elif dom == "email":
            columns.append([f"peer{n % 31}@example.com" for n in numbers])
            columns.append([str(1000 + n % 5000) for n in numbers])
        else:
            columns.append([f"F{n % 503}.doc" for n in numbers])
        path = out_dir / f"{dom}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_HEADERS[dom])
            w.writerows(zip(*columns))
        files[dom] = path.name

    positives = sorted((s.user_id, s.day) for s in sequences if s.label)
    write_labels(out_dir / "labels.csv", positives)
    with (out_dir / "behaviors.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "day", "regime"])
        for (u, d), r in sorted(regimes.items()):
            w.writerow([u, d.isoformat(), r])
    (out_dir / "profiles.json").write_text(json.dumps([p.to_dict() for p in profiles]), encoding="utf-8")

    manifest = {
        "seed": config.seed,
        "config": asdict(config),
        "files": files,
        "labels": "labels.csv",
        "behaviors": "behaviors.csv",
        "profiles": "profiles.json",
        "active_days": len(sequences),
        "positive_days": len(positives),
        "events": int(sum(len(s.tokens) for s in sequences)),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return manifest


def load_profiles(path: str | Path) -> dict[str, UserProfile]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {d["user"]: UserProfile.from_dict(d) for d in data}


def body_counts(sequence: UserDaySequence) -> np.ndarray:
    counts = np.zeros(len(BODY_TOKENS))
    for tok in sequence.tokens:
        if tok in BODY_TOKENS:
            counts[BODY_TOKENS.index(tok)] += 1
    return counts


def _poisson_logpmf(k: np.ndarray, rates: np.ndarray) -> np.ndarray:
    return (k * np.log(rates) - rates - gammaln(k + 1)).sum(axis=-1)


def oracle_scores(sequences: list[UserDaySequence], profiles: dict[str, UserProfile]) -> np.ndarray:
    """Log-likelihood ratio of the exfiltration regime against the user's normal mixture.

    Uses the true generating rates, so it bounds what any count-based detector
    can achieve on this corpus; higher means more anomalous.
    """
    out = np.empty(len(sequences))
    for i, seq in enumerate(sequences):
        prof = profiles[seq.user_id]
        k = body_counts(seq)
        normal = logsumexp(_poisson_logpmf(k[None, :], prof.regime_rates) + np.log(prof.regime_weights))
        out[i] = _poisson_logpmf(k, prof.anomaly_rates) - normal
    return out
