"""Encoder + decoder wrapper: parameter ownership, variants and checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as tn
from .decoder import DecoderConfig, decode, decode_moe, init_decoder, moe_features
from .encoder import EncoderConfig, FeaturedTracks, encode, init_encoder
from .tensor import Tensor
from .trackdata import TrackSet, assemble_features

__all__ = ["ModelConfig", "MotionSegModel", "VARIANTS"]

# Named configurations used by the ablation suite.
VARIANTS = ("full", "moe", "msde_off", "no_tracks", "no_dino", "no_pe", "no_depth", "no_st_att")

_META = "meta.config"


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    use_tracks: bool = True

    def __post_init__(self):
        if self.decoder.model_dim != self.encoder.model_dim:
            raise ValueError("encoder and decoder model_dim differ")
        want_extra = 0 if self.decoder.moe_mode else self.decoder.semantic_dim
        if self.encoder.extra_dim != want_extra:
            raise ValueError(f"encoder extra_dim must be {want_extra} for this fusion mode")

    @classmethod
    def build(cls, variant: str = "full", **dims) -> "ModelConfig":
        """Config for a named variant; ``dims`` override encoder/decoder sizes."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        enc_keys = set(EncoderConfig.__dataclass_fields__)
        dec_keys = set(DecoderConfig.__dataclass_fields__)
        unknown = set(dims) - enc_keys - dec_keys
        if unknown:
            raise KeyError(f"unknown model key(s): {sorted(unknown)}")
        enc = {k: v for k, v in dims.items() if k in enc_keys}
        dec = {k: v for k, v in dims.items() if k in dec_keys}
        if "model_dim" in dims:
            dec["model_dim"] = dims["model_dim"]
        use_tracks = True
        if variant == "moe":
            dec["moe_mode"] = False
        elif variant == "msde_off":
            dec["msde_mode"] = False
        elif variant == "no_tracks":
            use_tracks = False
        elif variant == "no_dino":
            dec["use_dino"] = False
        elif variant == "no_pe":
            enc["use_pe"] = False
        elif variant == "no_depth":
            enc["use_depth"] = False
        elif variant == "no_st_att":
            enc["use_st_att"] = False
        decoder = DecoderConfig(**dec)
        if not decoder.moe_mode:
            enc["extra_dim"] = decoder.semantic_dim
        return cls(EncoderConfig(**enc), decoder, use_tracks)

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict(),
                "use_tracks": self.use_tracks}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]),
                   bool(d.get("use_tracks", True)))


class MotionSegModel:
    """Owns a parameter dict named ``enc.*`` / ``dec.*``."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng([seed, 7])
        self.params = {**init_encoder(config.encoder, rng), **init_decoder(config.decoder, rng)}

    # ------------------------------------------------------------ inputs
    def inputs(self, tracks: TrackSet, semantic) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(features, validity, S) as consumed by ``forward``."""
        enc = self.config.encoder
        feats = assemble_features(tracks, enc.n_freqs, enc.use_pe, enc.use_depth,
                                  self.config.use_tracks)
        valid = tracks.validity if self.config.use_tracks else np.ones(tracks.validity.shape, bool)
        S = np.asarray(getattr(semantic, "vectors", semantic), dtype=np.float64)
        if not self.config.decoder.moe_mode:
            feats = moe_features(feats, S, self.config.decoder)
            if self.config.use_tracks:
                feats[~valid] = 0.0
        return feats, valid, S

    # ------------------------------------------------------------ forward
    def forward(self, features, validity: np.ndarray, S, hooks: dict | None = None
                ) -> tuple[Tensor, FeaturedTracks]:
        featured = encode(self.params, features, validity, self.config.encoder, hooks)
        dec = decode if self.config.decoder.moe_mode else decode_moe
        return dec(self.params, featured, S, self.config.decoder, hooks), featured

    def predict(self, tracks: TrackSet, semantic) -> np.ndarray:
        feats, valid, S = self.inputs(tracks, semantic)
        probs, _ = self.forward(feats, valid, S)
        return probs.data.copy()

    # ------------------------------------------------------------ state
    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = {k for k in set(state) - set(self.params)
                 if not k.startswith(("meta.", "opt.", "train."))}
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        blob = np.frombuffer(json.dumps(self.config.to_dict(), sort_keys=True).encode(), np.uint8)
        return {**self.state_dict(), _META: blob.astype(np.float64)}

    def save(self, path: str | Path, extra: dict[str, np.ndarray] | None = None) -> None:
        tn.save_checkpoint(path, {**self.checkpoint_arrays(), **(extra or {})})

    @staticmethod
    def config_from_arrays(arrays: dict[str, np.ndarray]) -> ModelConfig:
        if _META not in arrays:
            raise tn.CheckpointError("checkpoint carries no model config")
        raw = bytes(np.asarray(arrays[_META]).astype(np.uint8).tobytes())
        return ModelConfig.from_dict(json.loads(raw.decode()))

    @classmethod
    def load(cls, path: str | Path) -> tuple["MotionSegModel", dict[str, np.ndarray]]:
        """Model plus the full array dict (optimizer state, counters)."""
        arrays = tn.load_checkpoint(path)
        model = cls(cls.config_from_arrays(arrays))
        model.load_state_dict(arrays)
        return model, arrays

    def with_config(self, **changes) -> "MotionSegModel":
        """Copy sharing no state, with top-level config fields replaced."""
        m = MotionSegModel.__new__(MotionSegModel)
        m.config = replace(self.config, **changes)
        m.params = {k: tn.parameter(v.data.copy(), k) for k, v in self.params.items()}
        return m
