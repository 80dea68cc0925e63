"""
Run presets for hrwarp commands
"""
from __future__ import annotations

from typing import Any, Optional

from .attention import AttentionConfig
from .env import GAMMA_VAR, SEED_VAR, THREADS_VAR, env_float, env_int
from .key_sampler import SamplerConfig
from .local_edit import PipelineConfig


class Config:
    """Base configuration: plain key sampling, no editing constraints"""
    ITERATIONS = 15
    PARTICLE_SLOTS = 2
    INIT_SAMPLES = 4
    WINDOW_W0: Optional[float] = None  # max(H, W)
    DECAY_LAMBDA = 0.4
    DECAY_CUTOFF = 10
    EXTRA_PROPAGATIONS = 0
    PROPAGATION_MODE = "adjusted"
    NEIGHBOR_SET = 8
    SUBPIXEL = False
    GAMMA = 100.0
    DENSE_SIZE_CAP = 128 * 128
    LABEL_PENALTY = False
    PENALTY_VALUE = 1e4
    LABEL_PENALTY_MODE = "hard"
    RECONSTRUCTION_MODE = False
    DEDUPE = True

    @classmethod
    def settings(cls) -> dict[str, Any]:
        """Preset values, with HRWARP_SEED/THREADS/GAMMA from the environment when set."""
        return {
            "iterations": cls.ITERATIONS,
            "particle_slots": cls.PARTICLE_SLOTS,
            "init_samples": cls.INIT_SAMPLES,
            "window_w0": cls.WINDOW_W0,
            "decay_lambda": cls.DECAY_LAMBDA,
            "decay_cutoff": cls.DECAY_CUTOFF,
            "extra_propagations": cls.EXTRA_PROPAGATIONS,
            "propagation_mode": cls.PROPAGATION_MODE,
            "neighbor_set": cls.NEIGHBOR_SET,
            "subpixel": cls.SUBPIXEL,
            "seed": env_int(SEED_VAR, 0),
            "threads": env_int(THREADS_VAR, 1),
            "gamma": env_float(GAMMA_VAR, cls.GAMMA),
            "dense_size_cap": cls.DENSE_SIZE_CAP,
            "allow_oversize": False,
            "label_penalty": cls.LABEL_PENALTY,
            "penalty_value": cls.PENALTY_VALUE,
            "label_penalty_mode": cls.LABEL_PENALTY_MODE,
            "reconstruction_mode": cls.RECONSTRUCTION_MODE,
            "dedupe": cls.DEDUPE,
            "features_src": None,
            "features_tgt": None,
        }

    @classmethod
    def pipeline(cls, **overrides: Any) -> PipelineConfig:
        """Build a PipelineConfig; overrides that are ``None`` keep the preset value."""
        values = cls.settings()
        unknown = set(overrides) - set(values)
        if unknown:
            raise TypeError(f"Unknown settings: {sorted(unknown)}")
        explicit = {key: value for key, value in overrides.items() if value is not None}
        values.update(explicit)
        if "decay_cutoff" not in explicit:
            values["decay_cutoff"] = min(values["decay_cutoff"], values["iterations"])

        sampler = SamplerConfig(
            iterations=values["iterations"],
            particle_slots=values["particle_slots"],
            init_samples=values["init_samples"],
            window_w0=values["window_w0"],
            decay_lambda=values["decay_lambda"],
            decay_cutoff=values["decay_cutoff"],
            extra_propagations=values["extra_propagations"],
            propagation_mode=values["propagation_mode"],
            neighbor_set=values["neighbor_set"],
            subpixel=values["subpixel"],
            seed=values["seed"],
            threads=values["threads"],
        )
        attention = AttentionConfig(
            gamma=values["gamma"],
            dense_size_cap=values["dense_size_cap"],
            allow_oversize=values["allow_oversize"],
            threads=values["threads"],
        )
        return PipelineConfig(
            sampler=sampler,
            attention=attention,
            label_penalty=values["label_penalty"],
            penalty_value=values["penalty_value"],
            label_penalty_mode=values["label_penalty_mode"],
            reconstruction_mode=values["reconstruction_mode"],
            dedupe=values["dedupe"],
            features_src=values["features_src"],
            features_tgt=values["features_tgt"],
        )


class LocalEditConfig(Config):
    """Local editing: label penalty plus extra propagate-evaluate passes"""
    EXTRA_PROPAGATIONS = 2
    LABEL_PENALTY = True


class ReconstructionConfig(LocalEditConfig):
    """Reconstruction: sources inside the mask are excluded"""
    RECONSTRUCTION_MODE = True


class RawKeysConfig(LocalEditConfig):
    """Absolute-coordinate propagation, continuous draws, duplicate keys kept"""
    PROPAGATION_MODE = "raw"
    SUBPIXEL = True
    DEDUPE = False


class BenchConfig(Config):
    """Benchmark runs: dense oracle allowed up to 64x64"""
    DENSE_SIZE_CAP = 64 * 64


# Configuration dictionary
config = {
    'local-edit': LocalEditConfig,
    'reconstruction': ReconstructionConfig,
    'raw-keys': RawKeysConfig,
    'sampling': Config,
    'bench': BenchConfig,
    'default': LocalEditConfig
}
