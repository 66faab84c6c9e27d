"""Fixed-width numeric feature assembly for session events.

Column layout, frozen and relied upon by the model and the checkpoints:

triplet (observed first-half event):
    [track embedding (d_emb) | duration | release_year | acoustic_0..d_ac-1 |
     seek_fwd_count | seek_back_count | hour_of_day |
     skipped | context_switch | no_pause_before_play | short_pause_before_play |
     context_type vocab index | position | is_pad]

doublet (second-half event, interactions withheld):
    [track embedding (d_emb) | duration | release_year | acoustic_0..d_ac-1 |
     position | is_pad]

Numeric features are min-max scaled into [0, 1] from training data (values
outside the training range are clamped). The context_type slot carries the
vocabulary *index*; the trainable dense embedding for it lives in the model.
Position is normalized by the global maximum session length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    MAX_SESSION_LEN,
    EmptyBatchError,
    InteractionRecord,
    Session,
    TrackRecord,
)
from .errors import StateError, ValidationError

NUMERIC_INTERACTION_FEATURES = ("seek_fwd_count", "seek_back_count", "hour_of_day")
# width of the interaction-only block: 3 numerics + 4 booleans + ctx index
INTERACTION_WIDTH = len(NUMERIC_INTERACTION_FEATURES) + 4 + 1


@dataclass
class Scaler:
    """Min-max normalizer learned from training values."""

    lo: float
    hi: float

    def transform(self, x: float) -> float:
        if self.hi == self.lo:
            return 0.0
        t = (x - self.lo) / (self.hi - self.lo)
        return min(1.0, max(0.0, t))

    @classmethod
    def fit(cls, values) -> "Scaler":
        values = list(values)
        if not values:
            raise ValidationError("cannot fit a scaler on no values")
        return cls(lo=float(min(values)), hi=float(max(values)))


def transform_numeric(scaler: Scaler, x: float) -> float:
    return scaler.transform(x)


def position_feature(position: int) -> float:
    if not 1 <= position <= MAX_SESSION_LEN:
        raise ValidationError(f"position must be in [1, {MAX_SESSION_LEN}], got {position}")
    return position / MAX_SESSION_LEN


@dataclass
class Vocabulary:
    """Dense token index with 0 reserved for unknown/pad tokens."""

    index: dict[str, int]

    @classmethod
    def fit(cls, tokens) -> "Vocabulary":
        return cls(index={tok: i for i, tok in enumerate(sorted(set(tokens)), start=1)})

    def lookup(self, token: str) -> int:
        return self.index.get(token, 0)

    @property
    def size(self) -> int:
        """Number of embedding rows needed, reserved index included."""
        return len(self.index) + 1


class FeaturePipeline:
    """Scalers, vocabularies and the pretrained track-embedding table.

    Construct with the embedding table (track_id -> vector), then ``fit`` on
    training sessions before any ``assemble_*`` call. Fitted pipelines are
    immutable in use and safe to share across threads.
    """

    def __init__(self, embeddings: dict[str, np.ndarray], d_emb: int | None = None):
        if d_emb is None:
            if not embeddings:
                raise ValidationError("d_emb is required when the embedding table is empty")
            d_emb = len(next(iter(embeddings.values())))
        self.embeddings = {k: np.asarray(v, dtype=np.float64) for k, v in embeddings.items()}
        for track_id, vec in self.embeddings.items():
            if vec.shape != (d_emb,):
                raise ValidationError(
                    f"embedding for {track_id!r} has shape {vec.shape}, want ({d_emb},)"
                )
        self.d_emb = int(d_emb)
        self.acoustic_dim: int | None = None
        self.scalers: dict[str, Scaler] = {}
        self.context_vocab: Vocabulary | None = None
        self.fitted = False

    def fit(self, sessions: list[Session], tracks: dict[str, TrackRecord]) -> "FeaturePipeline":
        if not sessions:
            raise EmptyBatchError("cannot fit the feature pipeline on an empty session list")
        durations, years, acoustics = [], [], []
        seek_fwd, seek_back, hours, contexts = [], [], [], []
        seen_tracks = set()
        for session in sessions:
            for ev in session.events:
                if ev.track_id not in seen_tracks:
                    seen_tracks.add(ev.track_id)
                    track = tracks[ev.track_id]
                    durations.append(track.duration)
                    years.append(track.release_year)
                    acoustics.append(track.acoustic)
                if ev.interaction is not None:
                    seek_fwd.append(ev.interaction.seek_fwd_count)
                    seek_back.append(ev.interaction.seek_back_count)
                    hours.append(ev.interaction.hour_of_day)
                    contexts.append(ev.interaction.context_type)
        acoustic = np.asarray(acoustics)
        self.acoustic_dim = acoustic.shape[1]
        self.scalers = {
            "duration": Scaler.fit(durations),
            "release_year": Scaler.fit(years),
            "seek_fwd_count": Scaler.fit(seek_fwd),
            "seek_back_count": Scaler.fit(seek_back),
            "hour_of_day": Scaler.fit(hours),
        }
        for i in range(self.acoustic_dim):
            self.scalers[f"acoustic_{i}"] = Scaler.fit(acoustic[:, i])
        self.context_vocab = Vocabulary.fit(contexts)
        self.fitted = True
        return self

    def _require_fitted(self):
        if not self.fitted:
            raise StateError("feature pipeline used before fit()")

    @property
    def d_doub(self) -> int:
        self._require_fitted()
        return self.d_emb + 2 + self.acoustic_dim + 2

    @property
    def d_trip(self) -> int:
        return self.d_doub + INTERACTION_WIDTH

    @property
    def triplet_ctx_col(self) -> int:
        """Column of the context_type vocab index inside a triplet vector."""
        return self.d_trip - 3

    @property
    def context_vocab_size(self) -> int:
        self._require_fitted()
        return self.context_vocab.size

    def track_embedding(self, track_id: str) -> np.ndarray:
        vec = self.embeddings.get(track_id)
        return np.zeros(self.d_emb) if vec is None else vec

    def _track_block(self, track: TrackRecord) -> list[float]:
        out = [
            self.scalers["duration"].transform(track.duration),
            self.scalers["release_year"].transform(track.release_year),
        ]
        if len(track.acoustic) != self.acoustic_dim:
            raise ValidationError(
                f"track {track.track_id}: acoustic dim {len(track.acoustic)} "
                f"!= fitted dim {self.acoustic_dim}"
            )
        out.extend(
            self.scalers[f"acoustic_{i}"].transform(track.acoustic[i])
            for i in range(self.acoustic_dim)
        )
        return out

    def assemble_doublet(self, track: TrackRecord, position: int) -> np.ndarray:
        self._require_fitted()
        parts = list(self.track_embedding(track.track_id))
        parts.extend(self._track_block(track))
        parts.append(position_feature(position))
        parts.append(0.0)  # is_pad
        return np.array(parts)

    def assemble_triplet(
        self, track: TrackRecord, interaction: InteractionRecord, position: int
    ) -> np.ndarray:
        self._require_fitted()
        parts = list(self.track_embedding(track.track_id))
        parts.extend(self._track_block(track))
        parts.append(self.scalers["seek_fwd_count"].transform(interaction.seek_fwd_count))
        parts.append(self.scalers["seek_back_count"].transform(interaction.seek_back_count))
        parts.append(self.scalers["hour_of_day"].transform(interaction.hour_of_day))
        parts.extend(float(flag) for flag in interaction.targets())
        parts.append(float(self.context_vocab.lookup(interaction.context_type)))
        parts.append(position_feature(position))
        parts.append(0.0)  # is_pad
        return np.array(parts)

    def triplet_pad(self) -> np.ndarray:
        self._require_fitted()
        vec = np.zeros(self.d_trip)
        vec[-1] = 1.0
        return vec

    def doublet_pad(self) -> np.ndarray:
        self._require_fitted()
        vec = np.zeros(self.d_doub)
        vec[-1] = 1.0
        return vec

    def schema_fingerprint(self) -> tuple:
        """Stable identity of the feature layout, used for ensemble compatibility."""
        self._require_fitted()
        return (
            self.d_emb,
            self.acoustic_dim,
            tuple(sorted(self.scalers)),
            tuple(sorted(self.context_vocab.index.items())),
        )

    def to_dict(self) -> dict:
        self._require_fitted()
        return {
            "d_emb": self.d_emb,
            "acoustic_dim": self.acoustic_dim,
            "scalers": {k: [s.lo, s.hi] for k, s in sorted(self.scalers.items())},
            "context_vocab": dict(sorted(self.context_vocab.index.items())),
            "embeddings": {k: list(map(float, v)) for k, v in sorted(self.embeddings.items())},
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeaturePipeline":
        pipeline = cls(
            embeddings={k: np.array(v) for k, v in payload["embeddings"].items()},
            d_emb=payload["d_emb"],
        )
        pipeline.acoustic_dim = payload["acoustic_dim"]
        pipeline.scalers = {k: Scaler(lo=v[0], hi=v[1]) for k, v in payload["scalers"].items()}
        pipeline.context_vocab = Vocabulary(index=dict(payload["context_vocab"]))
        pipeline.fitted = True
        return pipeline
