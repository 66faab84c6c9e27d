"""Average Accuracy scoring, corpus-level reports, probability-averaging
ensembles, and submission-file evaluation.

Average Accuracy for one session rewards early correct predictions:

    AA = sum_i A(i) * L(i) / T

where L(i) says whether prediction i was correct and A(i) is the running
accuracy over the first i predictions. Over booleans the value is an exact
rational, so it is accumulated with Fraction and converted to float once at
the end; the result is the correctly rounded float of the true value.

Ensemble combination is the arithmetic mean of member skip probabilities;
per position the member values are sorted before summing, which makes the
output exactly invariant under member reordering. Ties at the threshold
resolve to a skip (the >= rule).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import model as model_mod
from .data import Session, TrackRecord, split_halves
from .errors import AlignmentError, EnsembleError, ParseError, ValidationError


def _as_bools(values, name: str) -> list[bool]:
    return [bool(v) for v in values]


def average_accuracy(pred, truth) -> float:
    pred = _as_bools(pred, "pred")
    truth = _as_bools(truth, "truth")
    if len(pred) != len(truth):
        raise ValidationError(
            f"prediction length {len(pred)} != truth length {len(truth)}"
        )
    if not pred:
        raise ValidationError("average_accuracy needs at least one prediction")
    correct = 0
    total = Fraction(0)
    for i, (p, t) in enumerate(zip(pred, truth), start=1):
        if p == t:
            correct += 1
            total += Fraction(correct, i)
    return float(total / len(pred))


@dataclass
class SessionScore:
    """Per-position breakdown of one session's Average Accuracy."""

    t: int
    correct: list[bool]     # L(i)
    running: list[float]    # A(i)
    aa: float


def session_score(pred, truth) -> SessionScore:
    aa = average_accuracy(pred, truth)
    correct = [bool(p) == bool(t) for p, t in zip(pred, truth)]
    running = []
    seen = 0
    for i, l in enumerate(correct, start=1):
        seen += l
        running.append(seen / i)
    return SessionScore(t=len(correct), correct=correct, running=running, aa=aa)


def mean_aa(predictions: dict, truths: dict) -> tuple[float, dict]:
    """Unweighted mean of per-session AA plus a positional report."""
    missing = sorted(set(truths) - set(predictions))
    extra = sorted(set(predictions) - set(truths))
    if missing or extra:
        raise AlignmentError(
            f"session sets differ; missing from predictions: {missing[:5]}, "
            f"unexpected in predictions: {extra[:5]}"
        )
    if not truths:
        raise ValidationError("mean_aa over an empty session set")
    bad_lengths = [
        sid for sid in truths if len(predictions[sid]) != len(truths[sid])
    ]
    if bad_lengths:
        raise AlignmentError(f"prediction length mismatch for sessions {bad_lengths[:5]}")
    per_session: dict[str, float] = {}
    first_correct = 0
    position_hits: dict[int, int] = {}
    position_counts: dict[int, int] = {}
    for sid in sorted(truths):
        score = session_score(predictions[sid], truths[sid])
        per_session[sid] = score.aa
        first_correct += score.correct[0]
        for i, l in enumerate(score.correct, start=1):
            position_hits[i] = position_hits.get(i, 0) + l
            position_counts[i] = position_counts.get(i, 0) + 1
    mean = sum(per_session.values()) / len(per_session)
    report = {
        "sessions": len(per_session),
        "mean_aa": mean,
        "first_position_accuracy": first_correct / len(per_session),
        "per_session": per_session,
        "per_position": [
            (i, position_hits[i] / position_counts[i], position_counts[i])
            for i in sorted(position_counts)
        ],
    }
    return mean, report


def second_half_truth(sessions: list[Session]) -> dict[str, list[bool]]:
    """Skip labels of each session's prediction half (requires train-mode data)."""
    truth = {}
    for session in sessions:
        _, second = split_halves(session)
        if any(ev.interaction is None for ev in second):
            raise ValidationError(
                f"session {session.session_id}: second-half interactions missing, "
                "cannot derive truth"
            )
        truth[session.session_id] = [ev.interaction.skipped for ev in second]
    return truth


def ensemble_probs(member_probs: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Arithmetic mean of member probabilities.

    Per position the member values are sorted and averaged as
    ``smallest + mean(values - smallest)``: sorting makes the result exactly
    invariant under member reordering, and the shifted form makes the mean of
    identical values bitwise equal to that value for any member count.
    """
    if not member_probs:
        raise EnsembleError("ensemble needs at least one member")
    keys = set(member_probs[0])
    for k, probs in enumerate(member_probs[1:], start=1):
        if set(probs) != keys:
            raise EnsembleError(f"member {k} predicts a different session set")
    combined = {}
    for sid in keys:
        stacked = np.sort(np.stack([probs[sid] for probs in member_probs]), axis=0)
        base = stacked[0]
        combined[sid] = base + (stacked - base).sum(axis=0) / len(member_probs)
    return combined


def ensemble_predict(
    members: list[tuple],
    sessions: list[Session],
    tracks: dict[str, TrackRecord],
    threshold: float = 0.5,
) -> dict[str, np.ndarray]:
    """Mean-probability ensemble over (params, pipeline) members; >= threshold skips.

    Members must share the feature-pipeline schema; the first member is the
    reference and any mismatch names the offending member position.
    """
    if not members:
        raise EnsembleError("ensemble needs at least one member")
    reference = members[0][1].schema_fingerprint()
    for k, (_, pipeline) in enumerate(members[1:], start=1):
        if pipeline.schema_fingerprint() != reference:
            raise EnsembleError(
                f"member {k}: feature pipeline schema differs from member 0"
            )
    member_probs = [
        model_mod.predict_probs(sessions, pipeline, tracks, params)
        for params, pipeline in members
    ]
    combined = ensemble_probs(member_probs)
    return {sid: probs >= threshold for sid, probs in combined.items()}


def write_submission(path, predictions: dict) -> None:
    """One line per session in session_id order, '1' for predicted skips."""
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(predictions):
            fh.write("".join("1" if p else "0" for p in predictions[sid]) + "\n")


def read_submission(path) -> list[list[bool]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            bad = set(line) - {"0", "1"}
            if bad:
                raise ParseError(
                    f"line {line_no}: submission characters must be 0/1, found {sorted(bad)}"
                )
            rows.append([c == "1" for c in line])
    return rows


def score_submission(truth_lines: dict[str, list[bool]], submission_rows: list[list[bool]]):
    """Score ordered submission rows against per-session truth.

    Truth keys are consumed in ascending session_id order, matching the
    documented submission ordering.
    """
    truth_ids = sorted(truth_lines)
    if len(submission_rows) != len(truth_ids):
        raise AlignmentError(
            f"submission has {len(submission_rows)} rows, truth has {len(truth_ids)} sessions"
        )
    predictions = {sid: submission_rows[k] for k, sid in enumerate(truth_ids)}
    return mean_aa(predictions, truth_lines)
