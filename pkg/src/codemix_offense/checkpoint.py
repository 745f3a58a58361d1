"""Checkpoint directories: weights written by their owners plus a ``meta.json`` record."""
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

META_FILE = "meta.json"


def text_fingerprint(texts):
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]


def config_fingerprint(config):
    payload = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def relative_to(path, base):
    """``path`` relative to the directory ``base`` (may climb with ``..``)."""
    return os.path.relpath(Path(path).resolve(), Path(base).resolve())


def directory_identity(directory):
    """Content digest of a checkpoint directory's metadata, independent of where it lives."""
    directory = Path(directory)
    for name in (META_FILE, "backbone.json"):
        if (directory / name).is_file():
            return file_digest(directory / name)[:16]
    raise FileNotFoundError(f"{directory} holds neither {META_FILE} nor backbone.json")


@dataclass
class Checkpoint:
    path: Path
    meta: dict

    @classmethod
    def write(cls, directory, meta):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                                           encoding="utf-8")
        return cls(directory, meta)

    @classmethod
    def read(cls, directory):
        directory = Path(directory)
        meta_path = directory / META_FILE
        if not meta_path.exists():
            raise FileNotFoundError(f"{directory} is not a checkpoint (no {META_FILE})")
        return cls(directory, json.loads(meta_path.read_text(encoding="utf-8")))

    @property
    def kind(self):
        return self.meta.get("kind")
