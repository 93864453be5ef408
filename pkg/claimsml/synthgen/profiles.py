"""claimsml: Condition Profiles and Generator Config

A condition profile is a latent disease: a prevalence, a hospitalization
log-odds and three code pools that its claims draw from. The default profile
set is built deterministically from the default risk-factor map: one profile
per risk factor (positive log-odds, diagnosis pool inside the risk's ranges)
followed by benign profiles drawn from chapters no risk range touches. A
separate noise pool feeds background claims and per-claim noise codes.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Any

import numpy as np

from claimsml import config
from claimsml.claims.codes import CodeSystem, MedicalCode, parse_code
from claimsml.claims.risk_factors import RiskFactorMap
from claimsml.errors import ConfigError
from claimsml.utils import make_rng

logger = logging.getLogger(__name__)

# ── Generator defaults ───────────────────────────────────────────────────────
N_PATIENTS = 50_000
N_PRETRAIN_CLAIMS = 200_000
N_PROFILES = 40
TARGET_POSITIVE_RATE = 0.15
AGE_COEFFICIENT = 0.3
SEX_COEFFICIENT = 0.2
NOISE_CODE_RATE = 0.2
INDETERMINATE_RATE = 0.005
LEAKAGE_CLAIM_RATE = 0.3
PARTITION_SIZE = 1000
PROFILE_SEED = 7919

DX_POOL_SIZE = 12
PX_POOL_SIZE = 8
RX_POOL_SIZE = 8
NOISE_POOL_SIZES = (30, 25, 25)   # dx, px, rx

RISK_PREVALENCE = (0.04, 0.15)
RISK_LOG_ODDS = (1.5, 2.5)
BENIGN_PREVALENCE = (0.05, 0.20)
BENIGN_LOG_ODDS = (-0.3, 0.1)

# Chapters for benign and noise diagnoses; codes matching any risk range are filtered out.
BENIGN_LETTERS = "GHLMNS"
NOISE_LETTERS = "RZ"

# Codes the generator writes on label and leakage claims. Never part of a pool.
COVID_DX = "U071"
EXPOSURE_DX = "Z20822"
COVID_TEST_PX = "87635"
INPATIENT_PX = "99223"
OFFICE_VISIT_PX = "99213"
RESERVED_CODES = frozenset(
    [("dx", c) for c in (*config.COVID_CODES, EXPOSURE_DX)]
    + [("px", c) for c in (COVID_TEST_PX, INPATIENT_PX, OFFICE_VISIT_PX)]
)


@dataclass(frozen=True)
class ConditionProfile:
    name: str
    dx_pool: tuple[MedicalCode, ...]
    px_pool: tuple[MedicalCode, ...]
    rx_pool: tuple[MedicalCode, ...]
    base_prevalence: float
    log_odds_hospitalization: float
    risk_name: str | None = None

    def __post_init__(self):
        for name, system in (("dx_pool", CodeSystem.DIAGNOSIS),
                             ("px_pool", CodeSystem.PROCEDURE),
                             ("rx_pool", CodeSystem.MEDICATION)):
            pool = tuple(getattr(self, name))
            object.__setattr__(self, name, pool)
            if not pool:
                raise ConfigError(f"generator.profiles.{self.name}.{name}", "must be nonempty")
            if any(code.system is not system for code in pool):
                raise ConfigError(f"generator.profiles.{self.name}.{name}", f"must hold {system.display} codes")
        if not 0.0 < self.base_prevalence < 1.0:
            raise ConfigError(f"generator.profiles.{self.name}.base_prevalence", "must be in (0, 1)")

    def codes(self) -> tuple[MedicalCode, ...]:
        return self.dx_pool + self.px_pool + self.rx_pool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dx": [c.value for c in self.dx_pool],
            "px": [c.value for c in self.px_pool],
            "rx": [c.value for c in self.rx_pool],
            "prevalence": self.base_prevalence,
            "log_odds": self.log_odds_hospitalization,
            "risk_name": self.risk_name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConditionProfile":
        try:
            return cls(
                name=str(data["name"]),
                dx_pool=tuple(parse_code(CodeSystem.DIAGNOSIS, c) for c in data["dx"]),
                px_pool=tuple(parse_code(CodeSystem.PROCEDURE, c) for c in data["px"]),
                rx_pool=tuple(parse_code(CodeSystem.MEDICATION, c) for c in data["rx"]),
                base_prevalence=float(data["prevalence"]),
                log_odds_hospitalization=float(data["log_odds"]),
                risk_name=data.get("risk_name"),
            )
        except KeyError as e:
            raise ConfigError(f"generator.profiles.{e.args[0]}", "missing") from None
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError("generator.profiles", str(e)) from None


@dataclass(frozen=True)
class CodeSpace:
    """Resolved profiles plus the noise pool (disjoint from every profile pool)."""

    profiles: tuple[ConditionProfile, ...]
    noise_dx: tuple[MedicalCode, ...]
    noise_px: tuple[MedicalCode, ...]
    noise_rx: tuple[MedicalCode, ...]

    @property
    def noise_codes(self) -> tuple[MedicalCode, ...]:
        return self.noise_dx + self.noise_px + self.noise_rx

    def owner(self) -> dict[MedicalCode, int]:
        """Profile index of every pooled code; noise codes map to -1."""
        table = {code: -1 for code in self.noise_codes}
        for i, profile in enumerate(self.profiles):
            for code in profile.codes():
                table[code] = i
        return table


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = config.DEFAULT_SEED + config.SEED_OFFSETS["generator"]
    n_patients: int = N_PATIENTS
    n_pretrain_claims: int = N_PRETRAIN_CLAIMS
    n_profiles: int = N_PROFILES
    profiles: tuple[ConditionProfile, ...] | None = None
    intercept: float | None = None
    target_positive_rate: float = TARGET_POSITIVE_RATE
    age_coefficient: float = AGE_COEFFICIENT
    sex_coefficient: float = SEX_COEFFICIENT
    noise_code_rate: float = NOISE_CODE_RATE
    indeterminate_rate: float = INDETERMINATE_RATE
    leakage_claim_rate: float = LEAKAGE_CLAIM_RATE
    partition_size: int = PARTITION_SIZE
    profile_seed: int = PROFILE_SEED

    def __post_init__(self):
        def require(ok: bool, key: str, message: str):
            if not ok:
                raise ConfigError(f"generator.{key}", message)

        require(self.n_patients >= 0, "n_patients", "must be >= 0")
        require(self.n_pretrain_claims >= 0, "n_pretrain_claims", "must be >= 0")
        require(self.partition_size >= 1, "partition_size", "must be >= 1")
        require(0.0 < self.target_positive_rate < 1.0, "target_positive_rate", "must be in (0, 1)")
        for key in ("noise_code_rate", "indeterminate_rate", "leakage_claim_rate"):
            require(0.0 <= getattr(self, key) <= 1.0, key, "must be a probability")
        if self.profiles is not None:
            object.__setattr__(self, "profiles", tuple(self.profiles))
            require(len(self.profiles) >= 1, "profiles", "must be nonempty")
            seen: dict[MedicalCode, str] = {}
            for profile in self.profiles:
                for code in profile.codes():
                    if code in seen and seen[code] != profile.name:
                        require(False, "profiles", f"code {code.token} is in both {seen[code]} and {profile.name}")
                    seen[code] = profile.name
        else:
            require(1 <= self.n_profiles <= 200, "n_profiles", "must be in [1, 200]")

    @classmethod
    def from_dict(cls, data: Any) -> "GeneratorConfig":
        if not isinstance(data, dict):
            raise ConfigError("generator", "must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs: dict = {}
        for key, value in data.items():
            if key.startswith("_"):
                continue
            if key not in known:
                raise ConfigError(f"generator.{key}", "unknown key")
            if key == "profiles" and value is not None:
                value = tuple(ConditionProfile.from_dict(p) for p in value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        if self.profiles is not None:
            out["profiles"] = [p.to_dict() for p in self.profiles]
        return out


# ── Default code space ───────────────────────────────────────────────────────

_TAILS = tuple([str(d) for d in range(10)] + [f"{d:02d}" for d in range(100)])


def _dx_candidates(letters: str, keep_category) -> list[str]:
    """Four- and five-character diagnoses under every kept three-character category."""
    out = []
    for letter in letters:
        for i in range(100):
            category = f"{letter}{i:02d}"
            if keep_category(MedicalCode(CodeSystem.DIAGNOSIS, category)):
                out.extend(category + tail for tail in _TAILS)
    return out


def _risk_dx_candidates(risk_map: RiskFactorMap, risk_name: str) -> list[str]:
    letters = set()
    for entry in risk_map.entries_for(risk_name):
        if entry.system is CodeSystem.DIAGNOSIS:
            letters.update(chr(c) for c in range(ord(entry.prefix_lo[0]), ord(entry.prefix_hi[0]) + 1))
    return _dx_candidates("".join(sorted(letters)), lambda c: risk_map.lookup(c) == {risk_name})


def _risk_px_candidates(risk_map: RiskFactorMap, risk_name: str) -> list[str]:
    out = []
    for entry in risk_map.entries_for(risk_name):
        if entry.system is CodeSystem.PROCEDURE and entry.prefix_lo.isdigit() and entry.prefix_hi.isdigit():
            lo, hi = int(entry.prefix_lo.ljust(5, "0")), int(entry.prefix_hi.ljust(5, "9"))
            out.extend(f"{n:05d}" for n in range(lo, hi + 1))
    return out


class _PoolDrawer:
    """Draws codes without replacement so that every pool is disjoint."""

    def __init__(self, rng: np.random.Generator, risk_map: RiskFactorMap, taken: set[MedicalCode]):
        self.rng = rng
        self.risk_map = risk_map
        self.taken = set(taken)
        self.taken.update(MedicalCode(CodeSystem(s), v) for s, v in RESERVED_CODES)

    def draw(self, system: CodeSystem, candidates: list[str], k: int) -> tuple[MedicalCode, ...]:
        out: list[MedicalCode] = []
        for i in self.rng.permutation(len(candidates)):
            code = MedicalCode(system, candidates[i])
            if code in self.taken:
                continue
            out.append(code)
            self.taken.add(code)
            if len(out) == k:
                break
        if len(out) < k:
            raise ConfigError("generator.profiles", f"not enough free {system.display} codes for a pool of {k}")
        return tuple(sorted(out))

    def neutral(self, values: list[str], system: CodeSystem) -> list[str]:
        return [v for v in values if not self.risk_map.lookup(MedicalCode(system, v))]

    def generic_px(self, n: int = 4000) -> list[str]:
        numeric = (self.rng.choice(80_000, size=n, replace=False) + 10_000).tolist()
        hcpcs = [f"J{i:04d}" for i in self.rng.choice(10_000, size=n // 10, replace=False).tolist()]
        return self.neutral([f"{v:05d}" for v in numeric] + hcpcs, CodeSystem.PROCEDURE)

    def generic_rx(self, n: int = 4000) -> list[str]:
        values = self.rng.integers(10**9, 10**11, size=n)
        return sorted({f"{v:011d}" for v in values.tolist()})


def build_code_space(gen: GeneratorConfig, risk_map: RiskFactorMap | None = None) -> CodeSpace:
    """Resolve profiles (config-supplied or default) and the noise pool."""
    return _build_code_space(gen.profiles, gen.n_profiles, gen.profile_seed,
                             risk_map if risk_map is not None else RiskFactorMap.default())


@lru_cache(maxsize=8)
def _build_code_space(profiles, n_profiles: int, profile_seed: int, risk_map: RiskFactorMap) -> CodeSpace:
    rng = make_rng(profile_seed)
    taken = {code for p in profiles for code in p.codes()} if profiles else set()
    drawer = _PoolDrawer(rng, risk_map, taken)
    px_space = drawer.generic_px()
    rx_space = drawer.generic_rx()

    if profiles is None:
        built: list[ConditionProfile] = []
        n_risk = min(n_profiles, len(risk_map))
        for risk_name in risk_map.risk_names[:n_risk]:
            risk_px = _risk_px_candidates(risk_map, risk_name)
            built.append(ConditionProfile(
                name=risk_name,
                dx_pool=drawer.draw(CodeSystem.DIAGNOSIS, _risk_dx_candidates(risk_map, risk_name), DX_POOL_SIZE),
                px_pool=drawer.draw(CodeSystem.PROCEDURE, risk_px or px_space, PX_POOL_SIZE),
                rx_pool=drawer.draw(CodeSystem.MEDICATION, rx_space, RX_POOL_SIZE),
                base_prevalence=float(rng.uniform(*RISK_PREVALENCE)),
                log_odds_hospitalization=float(rng.uniform(*RISK_LOG_ODDS)),
                risk_name=risk_name,
            ))
        benign_dx = _dx_candidates(BENIGN_LETTERS, lambda c: not risk_map.lookup(c))
        for i in range(n_profiles - n_risk):
            built.append(ConditionProfile(
                name=f"benign_{i:02d}",
                dx_pool=drawer.draw(CodeSystem.DIAGNOSIS, benign_dx, DX_POOL_SIZE),
                px_pool=drawer.draw(CodeSystem.PROCEDURE, px_space, PX_POOL_SIZE),
                rx_pool=drawer.draw(CodeSystem.MEDICATION, rx_space, RX_POOL_SIZE),
                base_prevalence=float(rng.uniform(*BENIGN_PREVALENCE)),
                log_odds_hospitalization=float(rng.uniform(*BENIGN_LOG_ODDS)),
            ))
        profiles = tuple(built)

    n_dx, n_px, n_rx = NOISE_POOL_SIZES
    noise_dx = _dx_candidates(NOISE_LETTERS, lambda c: not risk_map.lookup(c))
    space = CodeSpace(
        profiles=tuple(profiles),
        noise_dx=drawer.draw(CodeSystem.DIAGNOSIS, noise_dx, n_dx),
        noise_px=drawer.draw(CodeSystem.PROCEDURE, px_space, n_px),
        noise_rx=drawer.draw(CodeSystem.MEDICATION, rx_space, n_rx),
    )
    n_codes = sum(len(p.codes()) for p in space.profiles) + len(space.noise_codes)
    logger.debug("code space built", extra={"fields": {"profiles": len(space.profiles), "codes": n_codes}})
    return space
