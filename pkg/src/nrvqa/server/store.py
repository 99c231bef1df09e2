"""Session state and persistence for the rating service.

Every mutation is appended to a per-study JSONL log before it is
acknowledged, and state is rebuilt by replaying the log on startup, so
completed ratings are never rewritten.  Sessions serialize their own
mutations; distinct sessions do not contend.

Protocol rules enforced here (the client is untrusted): a playlist holds at
most one variant per source group, items are served strictly in order, each
item gets exactly one playback token, and ratings land on the 0.1 grid
inside [1, 5].
"""

from __future__ import annotations

import json
import math
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ..rng import DeterministicRng, seed_from_text
from ..subjective import RATING_MAX, RATING_MIN, RatingRecord, format_ratings_csv


class RatingStoreError(Exception):
    """Protocol violation or lookup failure; carries a stable error code."""

    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.status = status


def _not_found(code: str, message: str) -> RatingStoreError:
    return RatingStoreError(code, message, status=404)


def _conflict(code: str, message: str) -> RatingStoreError:
    return RatingStoreError(code, message, status=409)


def _invalid(code: str, message: str) -> RatingStoreError:
    return RatingStoreError(code, message, status=422)


def quantize_rating(value: float) -> float:
    """Snap to the nearest 0.1 step (half-up)."""
    return math.floor(value * 10.0 + 0.5) / 10.0


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class MediaItem:
    video_id: str
    path: str
    source_group: str


class MediaLibrary:
    """Static media directory with a JSON index of the available videos."""

    INDEX_NAME = "media_index.json"

    def __init__(self, root: Path, items: dict[str, MediaItem]):
        self.root = root
        self.items = items

    @classmethod
    def load(cls, media_dir: str | Path) -> "MediaLibrary":
        root = Path(media_dir)
        index_path = root / cls.INDEX_NAME
        if not index_path.is_file():
            raise FileNotFoundError(f"media index not found: {index_path}")
        payload = json.loads(index_path.read_text())
        items = {}
        for obj in payload["videos"]:
            item = MediaItem(obj["video_id"], obj["path"], obj["source_group"])
            items[item.video_id] = item
        return cls(root, items)

    def resolve(self, video_id: str) -> Path:
        item = self.items.get(video_id)
        if item is None:
            raise _invalid("unknown_video", f"video {video_id!r} is not in the library")
        path = self.root / item.path
        if not path.is_file():
            raise _invalid("missing_media", f"media file for {video_id!r} is missing")
        return path


@dataclass
class SessionItem:
    video_id: str
    token: str | None = None
    played: bool = False
    rating: float | None = None
    rated_at: str = ""


@dataclass
class Session:
    session_id: str
    study_id: str
    subject_id: str
    items: list[SessionItem]
    created_at: str
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def cursor(self) -> int:
        for i, item in enumerate(self.items):
            if item.rating is None:
                return i
        return len(self.items)

    @property
    def complete(self) -> bool:
        return self.cursor == len(self.items)

    @property
    def rated_count(self) -> int:
        return sum(1 for item in self.items if item.rating is not None)


class StudyStore:
    """Registry of sessions plus the append-only event logs."""

    def __init__(self, data_dir: str | Path, media: MediaLibrary):
        self.data_dir = Path(data_dir)
        self.media = media
        self.sessions: dict[str, Session] = {}
        self.tokens: dict[str, tuple[str, str]] = {}  # token -> (session_id, video_id)
        self._registry_lock = threading.Lock()
        self._log_lock = threading.Lock()
        (self.data_dir / "studies").mkdir(parents=True, exist_ok=True)
        self._replay()

    # -- persistence -------------------------------------------------------

    def _log_path(self, study_id: str) -> Path:
        return self.data_dir / "studies" / f"{study_id}.jsonl"

    def _append(self, study_id: str, event: dict) -> None:
        line = json.dumps(event, sort_keys=True)
        with self._log_lock:
            with open(self._log_path(study_id), "a") as fh:
                fh.write(line + "\n")

    def _replay(self) -> None:
        for log in sorted((self.data_dir / "studies").glob("*.jsonl")):
            with open(log) as fh:
                for line in fh:
                    if line.strip():
                        self._apply(json.loads(line))

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "session_created":
            session = Session(
                session_id=event["session_id"],
                study_id=event["study_id"],
                subject_id=event["subject_id"],
                items=[SessionItem(v) for v in event["videos"]],
                created_at=event["ts"],
            )
            self.sessions[session.session_id] = session
        elif kind == "media_token":
            session = self.sessions[event["session_id"]]
            for item in session.items:
                if item.video_id == event["video_id"]:
                    item.token = event["token"]
                    self.tokens[event["token"]] = (session.session_id, item.video_id)
                    break
        elif kind == "playback":
            session = self.sessions[event["session_id"]]
            for item in session.items:
                if item.video_id == event["video_id"]:
                    item.played = True
                    break
        elif kind == "rating":
            session = self.sessions[event["session_id"]]
            for item in session.items:
                if item.video_id == event["video_id"]:
                    item.rating = event["rating"]
                    item.rated_at = event["ts"]
                    break

    # -- operations ----------------------------------------------------------

    def create_session(self, study_id: str, subject_id: str,
                       video_ids: list[str], seed: int = 0) -> Session:
        if not video_ids:
            raise _invalid("empty_playlist", "playlist must not be empty")
        if len(set(video_ids)) != len(video_ids):
            raise _invalid("duplicate_video", "playlist repeats a video id")
        groups: dict[str, str] = {}
        for vid in video_ids:
            item = self.media.items.get(vid)
            if item is None:
                raise _invalid("unknown_video", f"video {vid!r} is not in the library")
            if item.source_group in groups:
                raise _invalid(
                    "playlist_overlap",
                    f"videos {groups[item.source_group]!r} and {vid!r} share "
                    f"source group {item.source_group!r}",
                )
            groups[item.source_group] = vid

        order = sorted(video_ids)
        DeterministicRng(seed_from_text(seed, subject_id)).shuffle(order)
        session = Session(
            session_id=uuid.uuid4().hex,
            study_id=study_id,
            subject_id=subject_id,
            items=[SessionItem(v) for v in order],
            created_at=_now(),
        )
        with self._registry_lock:
            self.sessions[session.session_id] = session
        self._append(study_id, {
            "event": "session_created",
            "session_id": session.session_id,
            "study_id": study_id,
            "subject_id": subject_id,
            "seed": seed,
            "videos": order,
            "ts": session.created_at,
        })
        return session

    def get_session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise _not_found("unknown_session", f"no session {session_id!r}")
        return session

    def next_item(self, session_id: str) -> tuple[Session, SessionItem | None]:
        """Current cursor item with its single playback token, or None if done."""
        session = self.get_session(session_id)
        with session.lock:
            if session.complete:
                return session, None
            item = session.items[session.cursor]
            if item.token is None:
                item.token = uuid.uuid4().hex
                self.tokens[item.token] = (session.session_id, item.video_id)
                self._append(session.study_id, {
                    "event": "media_token",
                    "session_id": session.session_id,
                    "video_id": item.video_id,
                    "token": item.token,
                })
            return session, item

    def submit_rating(self, session_id: str, video_id: str, rating: float) -> tuple[Session, float, int]:
        session = self.get_session(session_id)
        with session.lock:
            if session.complete:
                raise _conflict("session_complete", "all items are already rated")
            if not RATING_MIN <= rating <= RATING_MAX:
                raise _invalid(
                    "rating_out_of_range",
                    f"rating {rating} outside [{RATING_MIN}, {RATING_MAX}]",
                )
            index = session.cursor
            current = session.items[index]
            if video_id != current.video_id:
                for item in session.items[:index]:
                    if item.video_id == video_id:
                        raise _conflict(
                            "duplicate_rating", f"{video_id!r} was already rated"
                        )
                raise _conflict(
                    "out_of_order",
                    f"current item is {current.video_id!r}, not {video_id!r}",
                )
            value = quantize_rating(rating)
            ts = _now()
            self._append(session.study_id, {
                "event": "rating",
                "session_id": session.session_id,
                "study_id": session.study_id,
                "subject_id": session.subject_id,
                "video_id": video_id,
                "rating": value,
                "index": index,
                "ts": ts,
            })
            current.rating = value
            current.rated_at = ts
            if session.complete:
                self._snapshot(session.study_id)
            return session, value, index

    def resolve_media(self, token: str) -> Path:
        """Map a playback token to its media file; logs the first playback."""
        entry = self.tokens.get(token)
        if entry is None:
            raise _not_found("invalid_token", "unknown media token")
        session = self.get_session(entry[0])
        with session.lock:
            if session.complete or session.items[session.cursor].video_id != entry[1]:
                raise RatingStoreError(
                    "token_expired", "this item is no longer playable", status=410
                )
            item = session.items[session.cursor]
            if not item.played:
                item.played = True
                self._append(session.study_id, {
                    "event": "playback",
                    "session_id": session.session_id,
                    "video_id": item.video_id,
                    "token": token,
                    "ts": _now(),
                })
        return self.media.resolve(entry[1])

    # -- export ---------------------------------------------------------------

    def completed_sessions(self, study_id: str) -> list[Session]:
        sessions = [
            s for s in self.sessions.values()
            if s.study_id == study_id and s.complete
        ]
        return sorted(sessions, key=lambda s: (s.created_at, s.session_id))

    def export_csv(self, study_id: str) -> str:
        """Ratings CSV over completed sessions, ordered by (session, playlist index)."""
        sessions = self.completed_sessions(study_id)
        if not sessions:
            raise _not_found(
                "no_completed_sessions",
                f"study {study_id!r} has no completed sessions",
            )
        records = [
            RatingRecord(s.subject_id, item.video_id, item.rating, item.rated_at)
            for s in sessions
            for item in s.items
        ]
        return format_ratings_csv(records)

    def _snapshot(self, study_id: str) -> None:
        path = self.data_dir / "studies" / f"{study_id}_export.csv"
        path.write_text(self.export_csv(study_id))
