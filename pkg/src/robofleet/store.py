"""Durable episode records: an append-only event log per episode plus
per-camera image sequences, with dataset export and reference holdout.

Layout under the store root:

    <task_id>/<episode_id>/events.jsonl     one JSON object per line
    <task_id>/<episode_id>/frames/<camera>.zip
    <task_id>/<episode_id>/meta.json

Event timestamps are strictly increasing within an episode. Episodes
marked as references are withheld from every export; they feed scene
alignment instead of training sets.
"""

from __future__ import annotations

import argparse
import bisect
import json
import os
import random
import re
import shutil
import sys
import threading
import zipfile
from pathlib import Path
from typing import Optional

import numpy as np

from .protocol import decode_png, encode_png

EPISODE_KINDS = ("demonstration", "evaluation", "reference")
DEMO_CAP = 1000

_ID_RE = re.compile(r"^ep-(\d{6})$")


class StoreError(Exception):
    pass


class ClosedEpisode(StoreError):
    pass


class DemoCapReached(StoreError):
    pass


class TimestampOrder(StoreError):
    pass


def _atomic_write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True))
    os.replace(tmp, path)


class EpisodeWriter:
    """Single-writer append handle for one episode."""

    def __init__(self, store: "EpisodeStore", task_id: str, episode_id: str,
                 kind: str, robot_id: str):
        self._store = store
        self.task_id = task_id
        self.episode_id = episode_id
        self.kind = kind
        self.robot_id = robot_id
        self._dir = store._episode_dir(task_id, episode_id)
        (self._dir / "frames").mkdir(parents=True)
        self._log = open(self._dir / "events.jsonl", "a")
        self._last_ts: Optional[int] = None
        self._frame_counts: dict[str, int] = {}
        self._event_count = 0
        self.closed = False
        self._write_meta()

    def _write_meta(self) -> None:
        _atomic_write_json(self._dir / "meta.json", {
            "episode_id": self.episode_id,
            "task_id": self.task_id,
            "kind": self.kind,
            "robot_id": self.robot_id,
            "closed": self.closed,
            "event_count": self._event_count,
            "cameras": sorted(self._frame_counts),
        })

    def _append(self, timestamp_ns: int, label: str, data: dict) -> None:
        if self.closed:
            raise ClosedEpisode(f"{self.episode_id} is closed")
        if not isinstance(timestamp_ns, int):
            raise TimestampOrder(f"timestamp must be int ns, got {timestamp_ns!r}")
        if self._last_ts is not None and timestamp_ns <= self._last_ts:
            raise TimestampOrder(
                f"timestamp {timestamp_ns} not after {self._last_ts}")
        self._log.write(json.dumps(
            {"t": timestamp_ns, "label": label, "data": data}) + "\n")
        self._log.flush()
        self._last_ts = timestamp_ns
        self._event_count += 1

    def record_event(self, timestamp_ns: int, label: str, **data) -> None:
        if label == "frame":
            raise StoreError("frame events come from record_frame")
        self._append(timestamp_ns, label, data)

    def record_frame(self, camera_id: str, timestamp_ns: int,
                     rgb: np.ndarray) -> str:
        if self.closed:
            raise ClosedEpisode(f"{self.episode_id} is closed")
        index = self._frame_counts.get(camera_id, 0)
        name = f"{index:06d}.png"
        self._append(timestamp_ns, "frame", {"camera": camera_id, "file": name})
        archive = self._dir / "frames" / f"{camera_id}.zip"
        with zipfile.ZipFile(archive, "a", zipfile.ZIP_STORED) as z:
            z.writestr(name, encode_png(rgb))
        self._frame_counts[camera_id] = index + 1
        return name

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._log.close()
        self._write_meta()


class EpisodeStore:
    def __init__(self, root, demo_cap: int = DEMO_CAP):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.demo_cap = demo_cap
        self._lock = threading.RLock()

    def _episode_dir(self, task_id: str, episode_id: str) -> Path:
        return self.root / task_id / episode_id

    def _meta(self, task_id: str, episode_id: str) -> dict:
        return json.loads((self._episode_dir(task_id, episode_id) / "meta.json").read_text())

    def episode_ids(self, task_id: str, kind: Optional[str] = None) -> list[str]:
        task_dir = self.root / task_id
        if not task_dir.is_dir():
            return []
        out = []
        for child in sorted(task_dir.iterdir()):
            if not _ID_RE.match(child.name):
                continue
            if kind is not None and json.loads(
                    (child / "meta.json").read_text())["kind"] != kind:
                continue
            out.append(child.name)
        return out

    def demo_count(self, task_id: str) -> int:
        return len(self.episode_ids(task_id, "demonstration"))

    def begin_episode(self, task_id: str, kind: str,
                      robot_id: str = "") -> EpisodeWriter:
        if kind not in EPISODE_KINDS:
            raise StoreError(f"kind must be one of {EPISODE_KINDS}, got {kind!r}")
        with self._lock:
            if kind == "demonstration" and self.demo_count(task_id) >= self.demo_cap:
                raise DemoCapReached(
                    f"task {task_id} already holds {self.demo_cap} demonstration "
                    f"episodes; refusing to record more")
            existing = self.episode_ids(task_id)
            serial = 1 + max(
                (int(_ID_RE.match(e).group(1)) for e in existing), default=0)
            episode_id = f"ep-{serial:06d}"
            return EpisodeWriter(self, task_id, episode_id, kind, robot_id)

    # -- reads ---------------------------------------------------------

    def load_events(self, task_id: str, episode_id: str) -> list[dict]:
        path = self._episode_dir(task_id, episode_id) / "events.jsonl"
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def nearest_event(self, task_id: str, episode_id: str,
                      timestamp_ns: int) -> tuple[int, dict]:
        """Event whose timestamp is closest; earlier one wins a tie."""
        events = self.load_events(task_id, episode_id)
        if not events:
            raise StoreError(f"{episode_id} has no events")
        stamps = [e["t"] for e in events]
        right = bisect.bisect_left(stamps, timestamp_ns)
        if right == 0:
            return 0, events[0]
        if right == len(stamps):
            return len(stamps) - 1, events[-1]
        before, after = stamps[right - 1], stamps[right]
        if timestamp_ns - before <= after - timestamp_ns:
            return right - 1, events[right - 1]
        return right, events[right]

    def load_frame(self, task_id: str, episode_id: str, camera_id: str,
                   file_name: str) -> np.ndarray:
        archive = self._episode_dir(task_id, episode_id) / "frames" / f"{camera_id}.zip"
        with zipfile.ZipFile(archive) as z:
            return decode_png(z.read(file_name))

    def reference_frame(self, task_id: str, episode_id: str,
                        camera_id: str) -> np.ndarray:
        """First stored frame of the episode for that camera."""
        for event in self.load_events(task_id, episode_id):
            if event["label"] == "frame" and event["data"]["camera"] == camera_id:
                return self.load_frame(task_id, episode_id, camera_id,
                                       event["data"]["file"])
        raise StoreError(f"{episode_id} has no {camera_id} frames")

    # -- holdout and export --------------------------------------------

    def select_references(self, task_id: str, n: int, seed: int) -> list[str]:
        """Re-mark n demonstration episodes as alignment references.

        Sampling runs over the sorted id set, so the choice depends only
        on the seed and which episodes exist, not on insertion order.
        """
        with self._lock:
            demos = self.episode_ids(task_id, "demonstration")
            if n > len(demos):
                raise StoreError(
                    f"asked for {n} references, only {len(demos)} demonstrations")
            chosen = sorted(random.Random(seed).sample(demos, n))
            for episode_id in chosen:
                meta = self._meta(task_id, episode_id)
                meta["kind"] = "reference"
                _atomic_write_json(
                    self._episode_dir(task_id, episode_id) / "meta.json", meta)
            return chosen

    def export_dataset(self, task_id: str, out_dir) -> dict:
        """Copy every closed non-reference episode; manifest lands last,
        by atomic rename, so its presence means the export is whole."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        episodes = []
        skipped_open = []
        for episode_id in self.episode_ids(task_id):
            meta = self._meta(task_id, episode_id)
            if meta["kind"] == "reference":
                continue
            if not meta["closed"]:
                skipped_open.append(episode_id)
                continue
            src = self._episode_dir(task_id, episode_id)
            files = [f"{episode_id}.events.jsonl"]
            shutil.copyfile(src / "events.jsonl", out / files[0])
            for camera_id in meta["cameras"]:
                name = f"{episode_id}.{camera_id}.zip"
                shutil.copyfile(src / "frames" / f"{camera_id}.zip", out / name)
                files.append(name)
            episodes.append({"episode_id": episode_id, "kind": meta["kind"],
                             "event_count": meta["event_count"], "files": files})
        manifest = {
            "task_id": task_id,
            "episode_count": len(episodes),
            "episodes": episodes,
            "skipped_open": skipped_open,
        }
        _atomic_write_json(out / "manifest.json", manifest)
        return manifest


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="store", description="Episode record utilities.")
    parser.add_argument("command", choices=["export", "holdout"])
    parser.add_argument("--root", default="episodes", help="store directory")
    parser.add_argument("--task", required=True)
    parser.add_argument("--out", help="export target directory")
    parser.add_argument("--n", type=int, default=10, help="holdout size")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    store = EpisodeStore(args.root)
    if args.command == "export":
        if not args.out:
            parser.error("export needs --out")
        manifest = store.export_dataset(args.task, args.out)
        print(f"exported {manifest['episode_count']} episodes to {args.out}")
        for episode_id in manifest["skipped_open"]:
            print(f"skipped (still open): {episode_id}")
    else:
        chosen = store.select_references(args.task, args.n, args.seed)
        for episode_id in chosen:
            print(episode_id)
    return 0


if __name__ == "__main__":
    sys.exit(main())
