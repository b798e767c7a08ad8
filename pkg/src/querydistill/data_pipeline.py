"""Query corpus plumbing: records, dedup, splits, and translation merges.

Records move through the pipeline as JSONL. Every transformation here is
deterministic given its seed, and every id that leaves the merge step is
namespaced as "<language>:<source-id>" so corpora from different languages
can never collide.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DuplicateId, InsufficientTranslations
from .fileio import atomic_write_text


@dataclass(frozen=True)
class QueryRecord:
    id: str
    text: str
    language: str
    source: str
    positive_doc_id: str | None = None

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "text": self.text,
            "language": self.language,
            "source": self.source,
        }
        if self.positive_doc_id is not None:
            d["positive_doc_id"] = self.positive_doc_id
        return d


def record_from_dict(d: dict) -> QueryRecord:
    return QueryRecord(
        id=d["id"],
        text=d["text"],
        language=d["language"],
        source=d["source"],
        positive_doc_id=d.get("positive_doc_id"),
    )


def write_records(path, records: Sequence[QueryRecord]) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_records(path) -> list[QueryRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records


def dedup_records(records: Sequence[QueryRecord]) -> tuple[list[QueryRecord], int]:
    """Drop case-insensitive exact text duplicates, keeping first occurrence.

    The duplicate key is text.casefold().strip(); returns (kept, n_removed).
    """
    seen: set[str] = set()
    kept: list[QueryRecord] = []
    for rec in records:
        key = rec.text.casefold().strip()
        if key in seen:
            continue
        seen.add(key)
        kept.append(rec)
    return kept, len(records) - len(kept)


_MIN_STRATUM_FOR_FORCED_VAL = 50


def stratified_split(
    records: Sequence[QueryRecord], val_frac: float, seed: int
) -> tuple[list[QueryRecord], list[QueryRecord]]:
    """Split into train/val, stratified by (source, language).

    Each stratum contributes floor(val_frac * n) validation records, bumped
    to 1 when the stratum has at least 50 records, so no sizable group is
    silently absent from validation. Output preserves input order within
    each side.
    """
    if not 0.0 <= val_frac < 1.0:
        raise ValueError(f"val_frac must be in [0, 1), got {val_frac}")
    strata: dict[tuple[str, str], list[int]] = {}
    for i, rec in enumerate(records):
        strata.setdefault((rec.source, rec.language), []).append(i)

    rng = np.random.default_rng(seed)
    val_indices: set[int] = set()
    for key in sorted(strata):
        idxs = strata[key]
        n_val = math.floor(val_frac * len(idxs))
        if n_val == 0 and len(idxs) >= _MIN_STRATUM_FOR_FORCED_VAL and val_frac > 0.0:
            n_val = 1
        order = rng.permutation(len(idxs))
        val_indices.update(idxs[j] for j in order[:n_val])

    train = [r for i, r in enumerate(records) if i not in val_indices]
    val = [r for i, r in enumerate(records) if i in val_indices]
    return train, val


def namespace_id(language: str, source_id: str) -> str:
    if not language:
        raise ValueError("language must be non-empty")
    return f"{language}:{source_id}"


@dataclass(frozen=True)
class MergePlan:
    """How many records each target language still needs via translation."""

    target_per_language: int
    gaps: dict[str, int]  # language -> records to translate into it

    @property
    def total_translated(self) -> int:
        return sum(self.gaps.values())

    def combined_total(self, base_count: int) -> int:
        return base_count + self.total_translated


def build_merge_plan(
    existing_counts: dict[str, int],
    target_per_language: int = 200_000,
    pivot_language: str = "en",
) -> MergePlan:
    """Gap per language = max(0, target - existing).

    The pivot language is the translation source and is never itself a
    translation target, so it carries no gap even when under target.
    """
    if target_per_language <= 0:
        raise ValueError("target_per_language must be positive")
    gaps = {}
    for lang in sorted(existing_counts):
        if lang == pivot_language:
            continue
        gaps[lang] = max(0, target_per_language - existing_counts[lang])
    return MergePlan(target_per_language, gaps)


def sample_for_translation(
    pool: Sequence[QueryRecord], needed: int, seed: int
) -> list[QueryRecord]:
    """Seeded sample without replacement from the pivot-language pool."""
    if needed > len(pool):
        raise InsufficientTranslations(
            f"need {needed} records to translate but pool has {len(pool)}"
        )
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=needed, replace=False)
    return [pool[int(i)] for i in sorted(picks)]


def translate_records(
    records: Sequence[QueryRecord],
    language: str,
    translate_fn: Callable[[str, str], str] | None = None,
) -> list[QueryRecord]:
    """Re-language records: namespaced id, target language, hooked text.

    translate_fn(text, language) supplies actual translation; by default the
    text passes through unchanged (identity translation placeholder).
    """
    out = []
    for rec in records:
        text = translate_fn(rec.text, language) if translate_fn else rec.text
        out.append(
            replace(
                rec,
                id=namespace_id(language, rec.id),
                text=text,
                language=language,
                source=f"{rec.source}-translated",
            )
        )
    return out


def execute_merge_plan(
    base_records: Sequence[QueryRecord],
    plan: MergePlan,
    pool: Sequence[QueryRecord],
    seed: int,
    translate_fn: Callable[[str, str], str] | None = None,
) -> list[QueryRecord]:
    """Base corpus plus per-language translated samples, id-collision checked.

    Each target language draws its own seeded sample (seed offset by the
    language's position in the sorted gap list) so adding a language never
    reshuffles the others.
    """
    merged = list(base_records)
    for offset, lang in enumerate(sorted(plan.gaps)):
        needed = plan.gaps[lang]
        if needed == 0:
            continue
        picked = sample_for_translation(pool, needed, seed + offset)
        merged.extend(translate_records(picked, lang, translate_fn))

    seen: set[str] = set()
    for rec in merged:
        if rec.id in seen:
            raise DuplicateId(f"merged corpus contains id {rec.id!r} twice")
        seen.add(rec.id)
    return merged


def language_counts(records: Iterable[QueryRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.language] = counts.get(rec.language, 0) + 1
    return dict(sorted(counts.items()))
