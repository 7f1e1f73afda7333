import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """What was run, on what, with which knobs; written next to every output."""

    command: str
    argv: list[str] = field(default_factory=list)
    config_path: str | None = None
    inputs: dict = field(default_factory=dict)
    seed: int | None = None
    tau: float | list[float] | None = None
    t: float | None = None
    output_dir: str = "."
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def write(self, name=MANIFEST_NAME):
        os.makedirs(self.output_dir, exist_ok=True)
        path = os.path.join(self.output_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        logger.info(f"[Manifest] Wrote {path}")
        return path

    @classmethod
    def read(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls(**json.load(f))
