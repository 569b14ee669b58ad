"""Run manifests, content digests and the flat manifest registry."""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import UTC, datetime
from pathlib import Path


@dataclass
class RunManifest:
    """
    Record of one command run.

    Attributes:
        run_id: Content-derived identifier (see compute_run_id)
        command: Pipeline command that produced the run
        config: Configuration snapshot the run used
        inputs: SHA-256 digest of every input artifact, by path
        seed: Seed of the run
        outputs: Paths of every artifact the run wrote
        started_at: ISO-8601 UTC start time
        finished_at: ISO-8601 UTC end time
        extra: Command-specific facts (strategy, metrics, repeats, ...)
    """

    run_id: str
    command: str
    config: dict
    inputs: dict[str, str]
    seed: int
    outputs: list[str] = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(**data)


def now() -> str:
    return datetime.now(UTC).isoformat(timespec="seconds")


def file_digest(path: Path) -> str:
    """SHA-256 of a file, or of every file below a directory (relative names included)."""
    path = Path(path)
    digest = hashlib.sha256()
    if path.is_dir():
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(child.relative_to(path).as_posix().encode("utf-8") + b"\x00")
            digest.update(child.read_bytes())
    else:
        digest.update(path.read_bytes())
    return digest.hexdigest()


def compute_run_id(command: str, config: dict, inputs: dict[str, str], seed: int, key: dict | None = None) -> str:
    """
    Deterministic id from everything that determines a run's outputs.

    Timestamps are not part of it, so a rerun with identical inputs lands
    on the same id.
    """
    payload = json.dumps(
        {"command": command, "config": config, "inputs": inputs, "seed": seed, "key": key or {}},
        sort_keys=True,
        default=str,
    )
    return f"{command}-{hashlib.sha256(payload.encode('utf-8')).hexdigest()[:12]}"


class Registry:
    """Flat directory of `{run_id}.json` manifests."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, run_id: str) -> Path:
        return self.root / f"{run_id}.json"

    def write(self, manifest: RunManifest) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path(manifest.run_id)
        path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def read(self, run_id: str) -> RunManifest:
        return RunManifest.from_dict(json.loads(self.path(run_id).read_text(encoding="utf-8")))

    def manifests(self, command: str | None = None, **match) -> list[RunManifest]:
        """Manifests of `command` whose extra fields equal `match`, oldest first."""
        if not self.root.is_dir():
            return []
        found = []
        for path in sorted(self.root.glob("*.json")):
            manifest = RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
            if command is not None and manifest.command != command:
                continue
            if all(manifest.extra.get(k) == v for k, v in match.items()):
                found.append(manifest)
        return sorted(found, key=lambda m: (m.finished_at, m.run_id))

    def latest(self, command: str, **match) -> RunManifest | None:
        found = self.manifests(command, **match)
        return found[-1] if found else None

    def best(self, command: str = "evaluate", metric: str = "macro_f1") -> RunManifest | None:
        """Manifest with the highest stored `metric`; runs without it are ignored."""
        scored = [m for m in self.manifests(command) if m.extra.get(metric) is not None]
        if not scored:
            return None
        return max(scored, key=lambda m: (m.extra[metric], m.finished_at))
