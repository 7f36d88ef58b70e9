"""Application settings via pydantic-settings."""

from __future__ import annotations

import enum
from functools import lru_cache

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings


class MeanMode(enum.StrEnum):
    """How per-lane AFR values are combined into the OAFR."""

    arithmetic = "arithmetic"
    geometric = "geometric"


class BoundaryMode(enum.StrEnum):
    """Lane-change destination fractions for neighbours of the subject lane."""

    equal_split = "equal_split"
    forced_destination = "forced_destination"


class ZeroVolumePolicy(enum.StrEnum):
    """What to do with a subject lane that carried no vehicles."""

    skip_lane = "skip_lane"
    epsilon = "epsilon"


class OafrSettings(BaseSettings):
    """Overall average flow ratio settings.

    Reads CRASHRISK_OAFR_MEAN_MODE, CRASHRISK_OAFR_EPSILON, etc. from env.
    """

    model_config = {"env_prefix": "CRASHRISK_OAFR_", "frozen": True}

    mean_mode: MeanMode = MeanMode.arithmetic
    boundary_mode: BoundaryMode = BoundaryMode.equal_split
    zero_volume_policy: ZeroVolumePolicy = ZeroVolumePolicy.epsilon
    epsilon: float = 0.5

    @model_validator(mode="after")
    def _check_epsilon(self) -> OafrSettings:
        if self.zero_volume_policy == ZeroVolumePolicy.epsilon and not self.epsilon > 0:
            msg = f"epsilon must be > 0 under the epsilon policy, got {self.epsilon}"
            raise ValueError(msg)
        return self


@lru_cache
def get_oafr_settings() -> OafrSettings:
    """Return cached OAFR settings instance."""
    return OafrSettings()


class MatchingSettings(BaseSettings):
    """Matched case-control sampling settings.

    Reads CRASHRISK_MATCH_M, CRASHRISK_MATCH_RNG_SEED, etc. from env.
    """

    model_config = {"env_prefix": "CRASHRISK_MATCH_", "frozen": True}

    m: int = Field(default=4, ge=1)
    exclusion_window: float = Field(default=3.0, gt=0, description="hours")
    candidate_weeks: int | None = Field(default=None, ge=1)
    rng_seed: int = 0
    location_threshold_ft: float = Field(default=250.0, gt=0)


@lru_cache
def get_matching_settings() -> MatchingSettings:
    """Return cached matching settings instance."""
    return MatchingSettings()


class McmcSettings(BaseSettings):
    """Adaptive random-walk Metropolis settings.

    Reads CRASHRISK_MCMC_CHAINS, CRASHRISK_MCMC_ITERATIONS, etc. from env.
    """

    model_config = {"env_prefix": "CRASHRISK_MCMC_", "frozen": True}

    chains: int = Field(default=3, ge=2)
    iterations: int = Field(default=20000, ge=2)
    burn_in: int = Field(default=5000, ge=0)
    prior_variance: float = Field(default=1000.0, gt=0)
    target_acceptance: float = Field(default=0.234, gt=0, lt=1)
    seed: int = 0
    rhat_threshold: float = Field(default=1.1, gt=1)

    @model_validator(mode="after")
    def _check_burn_in(self) -> McmcSettings:
        if self.burn_in >= self.iterations:
            msg = f"burn_in ({self.burn_in}) must be < iterations ({self.iterations})"
            raise ValueError(msg)
        return self


@lru_cache
def get_mcmc_settings() -> McmcSettings:
    """Return cached MCMC settings instance."""
    return McmcSettings()


class ScreeningSettings(BaseSettings):
    """Correlation screening thresholds and MIC estimator parameters.

    Reads CRASHRISK_SCREEN_R_THRESHOLD, CRASHRISK_SCREEN_MIC_C, etc. from env.
    """

    model_config = {"env_prefix": "CRASHRISK_SCREEN_", "frozen": True}

    r_threshold: float = Field(default=0.6, gt=0, le=1)
    mic_threshold: float = Field(default=0.7, gt=0, le=1)
    mic_alpha: float = Field(default=0.6, gt=0, le=1)
    mic_c: int = Field(default=15, ge=1)
    cross_slice: bool = True


@lru_cache
def get_screening_settings() -> ScreeningSettings:
    """Return cached screening settings instance."""
    return ScreeningSettings()


class RunSettings(BaseSettings):
    """Process-wide execution settings.

    Reads CRASHRISK_THREADS from env.
    """

    model_config = {"env_prefix": "CRASHRISK_"}

    threads: int = Field(default=4, ge=1)


@lru_cache
def get_run_settings() -> RunSettings:
    """Return cached run settings instance."""
    return RunSettings()
