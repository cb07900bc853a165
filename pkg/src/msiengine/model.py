"""Domain vocabulary shared by every part of the engine.

Three sensory modalities, dimensionless stimulus intensities in [0, 1],
cue role maps for the Go/NoGo task, signed stimulus-onset asynchronies
for the perceptual-judgment task, and attended-pair foci for the
congruency-judgment task. Everything here is a plain immutable value.

Sign convention for SOA: the value is the delay of the sound onset in
milliseconds, so a negative SOA means the sound leads and a positive
SOA means the flash leads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional


class Modality(str, Enum):
    VISUAL = "visual"
    AUDITORY = "auditory"
    TACTILE = "tactile"


class Direction(str, Enum):
    INCREASE = "increase"
    DECREASE = "decrease"


class Focus(str, Enum):
    """Attended modality pair, cued block-wise in the congruency task."""

    AV = "AV"
    VT = "VT"
    AT = "AT"

    @property
    def attended(self) -> tuple[Modality, Modality]:
        return _FOCUS_PAIRS[self]


_FOCUS_PAIRS = {
    Focus.AV: (Modality.AUDITORY, Modality.VISUAL),
    Focus.VT: (Modality.VISUAL, Modality.TACTILE),
    Focus.AT: (Modality.AUDITORY, Modality.TACTILE),
}


class Role(str, Enum):
    GO = "go"
    NOGO = "nogo"


class Shape(str, Enum):
    GREEN_CHECKMARK = "green-checkmark"
    RED_CROSS = "red-cross"
    CIRCULAR_GRATING = "circular-grating"
    FADED_CIRCLE = "faded-circle"
    TONE_500HZ = "tone-500Hz"
    VIBRATION = "vibration"


class Param(str, Enum):
    OPACITY = "opacity"
    VOLUME = "volume"
    VIBRATION_DRIVE = "vibration-drive"
    CONTRAST = "contrast"
    TONE_AMPLITUDE = "tone-amplitude"


class ButtonId(str, Enum):
    X = "X"
    R2 = "R2"
    L2 = "L2"


#: Keyboard fallbacks the browser runner maps onto controller buttons.
KEYBOARD_FALLBACK = {
    ButtonId.X: "space",
    ButtonId.R2: "right-shift",
    ButtonId.L2: "left-shift",
}

SOA_CAP_MS = 1000


class ModelError(ValueError):
    """Raised on domain-rule violations (bad intensity, empty cue, ...)."""


def check_intensity(value: float, what: str = "intensity") -> float:
    if not (0.0 <= value <= 1.0):
        raise ModelError(f"{what} must lie in [0, 1], got {value!r}")
    return float(value)


def check_soa(value: float, cap: float = SOA_CAP_MS) -> float:
    if abs(value) > cap:
        raise ModelError(f"SOA magnitude exceeds {cap} ms cap: {value!r}")
    return float(value)


@dataclass(frozen=True)
class RampMs:
    """Up / hold / down envelope of a transient amplitude change."""

    up_ms: int
    hold_ms: int
    down_ms: int

    @property
    def total_ms(self) -> int:
        return self.up_ms + self.hold_ms + self.down_ms


@dataclass(frozen=True)
class ChangeSpec:
    """Transient amplitude change riding on a carrier stimulus (CJ trials)."""

    direction: Direction
    magnitude: float
    ramp: RampMs

    def __post_init__(self) -> None:
        check_intensity(self.magnitude, "change magnitude")


@dataclass(frozen=True)
class StimulusSpec:
    modality: Modality
    param: Param
    shape: Shape
    intensity: float
    duration_ms: int
    change: Optional[ChangeSpec] = None

    def __post_init__(self) -> None:
        check_intensity(self.intensity)
        if self.duration_ms < 0:
            raise ModelError("stimulus duration must be >= 0")


@dataclass(frozen=True)
class GngCue:
    """Map of presented modalities to their Go/NoGo roles.

    The seven possible nonempty modality subsets are the seven cue types
    of the Go/NoGo test phase.
    """

    roles: Mapping[Modality, Role]

    def __post_init__(self) -> None:
        if not self.roles:
            raise ModelError("cue must present at least one modality")
        object.__setattr__(self, "roles", dict(self.roles))

    @property
    def modalities(self) -> frozenset[Modality]:
        return frozenset(self.roles)


def gng_trial_label(cue: GngCue) -> Role:
    """A trial is Go iff at least one presented modality carries a Go role."""
    if not cue.roles:
        raise ModelError("empty cue has no label")
    if any(role is Role.GO for role in cue.roles.values()):
        return Role.GO
    return Role.NOGO


def cj_correct_answer(focus: Focus, dirs: Mapping[Modality, Direction]) -> bool:
    """True for congruent: the two attended modalities change the same way.

    The third, unattended modality never matters. Raises if a direction is
    missing for any modality (trimodal stimulation always drives all three).
    """
    missing = [m for m in Modality if m not in dirs]
    if missing:
        raise ModelError(f"missing change direction for {missing[0].value}")
    a, b = focus.attended
    return dirs[a] == dirs[b]


def scale_intensity(threshold: float, percent: float) -> float:
    """Scale a threshold by a difficulty percentage, clamped to [0, 1]."""
    check_intensity(threshold, "threshold")
    if percent <= 0:
        raise ModelError(f"scaling percent must be positive, got {percent!r}")
    return min(1.0, max(0.0, threshold * percent / 100.0))


# Parameters calibrated for the Go/NoGo task, in battery order.
GNG_PARAMS = (
    "visual_go_opacity",
    "visual_nogo_opacity",
    "auditory_go_volume",
    "auditory_nogo_volume",
    "tactile_nogo_drive",
)


@dataclass(frozen=True)
class PjThresholds:
    """Simultaneity thresholds per side; sound-first <= 0 <= flash-first."""

    te_sound_first: float
    te_flash_first: float

    def __post_init__(self) -> None:
        if self.te_sound_first > 0 or self.te_flash_first < 0:
            raise ModelError(
                "simultaneity thresholds must straddle or touch zero "
                f"(got {self.te_sound_first}, {self.te_flash_first})"
            )

    @property
    def tbw_ms(self) -> float:
        return tbw_width(self.te_sound_first, self.te_flash_first)


def tbw_width(te_sound_first: float, te_flash_first: float) -> float:
    """Temporal binding window width: flash-first minus sound-first threshold."""
    if te_sound_first > te_flash_first:
        raise ModelError("sound-first threshold must not exceed flash-first")
    return te_flash_first - te_sound_first


@dataclass(frozen=True)
class ThresholdProfile:
    """Per-parameter perceptual thresholds feeding stimulus scaling."""

    gng: Mapping[str, float] = field(default_factory=dict)
    cj: Mapping[tuple[Modality, Direction], float] = field(default_factory=dict)
    pj: Optional[PjThresholds] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "gng", dict(self.gng))
        object.__setattr__(self, "cj", dict(self.cj))
        for name, value in self.gng.items():
            if name not in GNG_PARAMS:
                raise ModelError(f"unknown GNG threshold parameter {name!r}")
            check_intensity(value, name)
        for key, value in self.cj.items():
            check_intensity(value, f"cj magnitude {key}")

    def require_gng(self) -> Mapping[str, float]:
        missing = [p for p in GNG_PARAMS if p not in self.gng]
        if missing:
            raise ModelError(f"GNG threshold profile incomplete: missing {missing}")
        return self.gng

    def require_cj(self) -> Mapping[tuple[Modality, Direction], float]:
        missing = [
            (m, d) for m in Modality for d in Direction if (m, d) not in self.cj
        ]
        if missing:
            m, d = missing[0]
            raise ModelError(f"CJ magnitude missing for ({m.value}, {d.value})")
        return self.cj

    def require_pj(self) -> PjThresholds:
        if self.pj is None:
            raise ModelError("PJ simultaneity thresholds missing")
        return self.pj


def profile_to_dict(profile: ThresholdProfile) -> dict:
    out: dict = {"gng": dict(profile.gng)}
    out["cj"] = {f"{m.value}.{d.value}": v for (m, d), v in profile.cj.items()}
    if profile.pj is not None:
        out["pj"] = {
            "te_sound_first": profile.pj.te_sound_first,
            "te_flash_first": profile.pj.te_flash_first,
        }
    else:
        out["pj"] = None
    return out


def profile_from_dict(data: Mapping) -> ThresholdProfile:
    cj = {}
    for key, value in (data.get("cj") or {}).items():
        mod, _, direction = key.partition(".")
        cj[(Modality(mod), Direction(direction))] = value
    pj = None
    if data.get("pj"):
        pj = PjThresholds(
            te_sound_first=float(data["pj"]["te_sound_first"]),
            te_flash_first=float(data["pj"]["te_flash_first"]),
        )
    return ThresholdProfile(gng=dict(data.get("gng") or {}), cj=cj, pj=pj)
