"""Post ingestion: JSONL parsing, CVE extraction, and corpus assembly.

Input is one JSON object per line with keys ``post_id``, ``actor_id``,
``forum_id``, ``timestamp`` (ISO-8601 UTC) and ``content``. Malformed lines
are skipped and counted, never fatal. A corpus keeps only posts that mention
at least one CVE.
"""

from __future__ import annotations

import io
import json
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import ValidationError

logger = logging.getLogger(__name__)

# Case-insensitive CVE token, bounded so e.g. "XCVE-2022-1234" or a trailing
# letter does not match. Hyphens are not token characters in forum text.
_CVE_RE = re.compile(r"(?<![A-Za-z0-9])CVE-(\d{4})-(\d{4,})(?![A-Za-z0-9])", re.IGNORECASE)

# Default validity window for post timestamps; generous on purpose.
DEFAULT_VALID_FROM = datetime(1995, 1, 1, tzinfo=timezone.utc)
DEFAULT_VALID_TO = datetime(2100, 1, 1, tzinfo=timezone.utc)

_REQUIRED_KEYS = ("post_id", "actor_id", "forum_id", "timestamp", "content")


@dataclass(frozen=True, order=True)
class CveId:
    """A CVE identifier in canonical "CVE-<year>-<sequence>" form."""

    year: int
    sequence: int

    def __post_init__(self) -> None:
        if not 1000 <= self.year <= 9999:
            raise ValidationError(f"CVE year out of range: {self.year}")
        if self.sequence < 1:
            raise ValidationError(f"CVE sequence must be >= 1: {self.sequence}")

    @classmethod
    def parse(cls, text: str) -> "CveId":
        m = _CVE_RE.fullmatch(text.strip())
        if m is None:
            raise ValidationError(f"not a CVE identifier: {text!r}")
        return cls(year=int(m.group(1)), sequence=int(m.group(2)))

    def __str__(self) -> str:
        return f"CVE-{self.year}-{self.sequence:04d}"


def extract_cve_ids(text: str) -> set[CveId]:
    """Extract the set of CVE ids mentioned in ``text``.

    Matching is case-insensitive and bounded on word edges; duplicate mentions
    within the text collapse to one id.
    """
    found: set[CveId] = set()
    for m in _CVE_RE.finditer(text):
        found.add(CveId(year=int(m.group(1)), sequence=int(m.group(2))))
    return found


@dataclass(frozen=True)
class PostRecord:
    """One forum post.

    ``mentions`` is empty until the corpus-build step extracts CVE ids from
    ``content`` (or a persisted corpus row carries them explicitly).
    """

    post_id: str
    actor_id: str
    forum_id: str
    timestamp: datetime
    content: str
    mentions: frozenset[CveId] = frozenset()


@dataclass
class ParsedPosts:
    """Result of parsing a JSONL stream: valid records plus a skip counter."""

    records: list[PostRecord]
    skipped: int = 0


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp to a UTC instant at second resolution."""
    if not isinstance(value, str):
        raise ValidationError(f"timestamp must be a string, got {type(value).__name__}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValidationError(f"unparseable timestamp: {value!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def _parse_record(
    line: str, valid_from: datetime, valid_to: datetime
) -> PostRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValidationError("record is not a JSON object")
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise ValidationError(f"missing key {key!r}")
        if not isinstance(obj[key], str):
            raise ValidationError(f"key {key!r} must be a string")
    ts = parse_timestamp(obj["timestamp"])
    if not valid_from <= ts <= valid_to:
        raise ValidationError(f"timestamp {ts.isoformat()} outside validity window")
    mentions = frozenset(CveId.parse(c) for c in obj.get("mentions", ()))
    return PostRecord(
        post_id=obj["post_id"],
        actor_id=obj["actor_id"],
        forum_id=obj["forum_id"],
        timestamp=ts,
        content=obj["content"],
        mentions=mentions,
    )


def _iter_lines(source: str | Path | IO[str] | Iterable[str]) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            yield from handle
    elif isinstance(source, io.TextIOBase):
        yield from source
    else:
        yield from source


def parse_posts(
    source: str | Path | IO[str] | Iterable[str],
    *,
    valid_from: datetime = DEFAULT_VALID_FROM,
    valid_to: datetime = DEFAULT_VALID_TO,
) -> ParsedPosts:
    """Parse a JSONL post stream.

    Malformed lines (bad JSON, missing keys, unparseable or out-of-window
    timestamps) are logged and counted in ``skipped``. An unreadable source
    raises ``OSError``.
    """
    records: list[PostRecord] = []
    skipped = 0
    for lineno, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        try:
            records.append(_parse_record(line, valid_from, valid_to))
        except (ValidationError, json.JSONDecodeError) as exc:
            skipped += 1
            logger.warning("skipping malformed line %d: %s", lineno, exc)
    return ParsedPosts(records=records, skipped=skipped)


@dataclass(frozen=True)
class CorpusStats:
    n_posts: int
    n_actors: int
    n_forums: int
    n_cves: int


@dataclass
class Corpus:
    """Deduplicated posts that mention at least one CVE, with derived indexes."""

    posts: list[PostRecord]
    actors: dict[str, list[PostRecord]] = field(repr=False, default_factory=dict)
    stats: CorpusStats = CorpusStats(0, 0, 0, 0)


def build_corpus(posts: Iterable[PostRecord]) -> Corpus:
    """Assemble a corpus: extract mentions, drop mention-less posts, index actors.

    Posts whose record already carries mentions keep them; otherwise mentions
    are extracted from ``content``. A duplicate ``post_id`` is fatal.
    """
    kept: list[PostRecord] = []
    seen_ids: set[str] = set()
    for post in posts:
        if post.post_id in seen_ids:
            raise ValidationError(f"duplicate post_id: {post.post_id!r}")
        seen_ids.add(post.post_id)
        mentions = post.mentions or frozenset(extract_cve_ids(post.content))
        if not mentions:
            continue
        kept.append(replace(post, mentions=mentions))

    actors: dict[str, list[PostRecord]] = {}
    forums: set[str] = set()
    cves: set[CveId] = set()
    for post in kept:
        actors.setdefault(post.actor_id, []).append(post)
        forums.add(post.forum_id)
        cves.update(post.mentions)

    stats = CorpusStats(
        n_posts=len(kept),
        n_actors=len(actors),
        n_forums=len(forums),
        n_cves=len(cves),
    )
    return Corpus(posts=kept, actors=actors, stats=stats)


def _post_to_row(post: PostRecord) -> dict:
    return {
        "post_id": post.post_id,
        "actor_id": post.actor_id,
        "forum_id": post.forum_id,
        "timestamp": post.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "content": post.content,
        "mentions": sorted(str(c) for c in post.mentions),
    }


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Persist a corpus as JSONL, one post per line, mentions explicit."""
    with open(path, "w", encoding="utf-8") as handle:
        for post in corpus.posts:
            handle.write(json.dumps(_post_to_row(post), sort_keys=True) + "\n")


def load_corpus(path: str | Path) -> Corpus:
    """Load a corpus persisted by :func:`save_corpus`."""
    parsed = parse_posts(path)
    if parsed.skipped:
        raise ValidationError(f"corpus file {path} has {parsed.skipped} malformed lines")
    return build_corpus(parsed.records)


def save_corpus_stats(corpus: Corpus, path: str | Path) -> None:
    payload = {
        "posts": corpus.stats.n_posts,
        "actors": corpus.stats.n_actors,
        "forums": corpus.stats.n_forums,
        "distinct_cves": corpus.stats.n_cves,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
