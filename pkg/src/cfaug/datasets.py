"""Dataset and manifest file formats: JSON-lines records with a schema
sidecar, versioned model documents, and digest-carrying run manifests."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable

from .augment import AugmentedDataset, DemoRecord
from .config import PipelineConfig, WorldConfig
from .observation import feature_schema

SCHEMA_VERSION = 1


class DatasetFormatError(ValueError):
    def __init__(self, path: Path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


def record_to_dict(rec: DemoRecord) -> dict:
    return {
        "sensor_obs": rec.sensor_obs,
        "filtered_obs": list(rec.filtered_obs),
        "action": rec.action,
        "action_class": rec.action_class,
        "scenario_id": rec.scenario_id,
        "template": rec.template,
        "seed": rec.seed,
        "time_step": rec.time_step,
        "rule_index": rec.rule_index,
        "map_target": list(rec.map_target),
        "flag_target": list(rec.flag_target),
        "is_cf": rec.is_cf,
        "cf_meta": rec.cf_meta,
    }


def record_from_dict(d: dict) -> DemoRecord:
    return DemoRecord(
        sensor_obs=d["sensor_obs"],
        filtered_obs=tuple(d["filtered_obs"]),
        action=d["action"],
        action_class=int(d["action_class"]),
        scenario_id=int(d["scenario_id"]),
        template=d["template"],
        seed=int(d["seed"]),
        time_step=int(d["time_step"]),
        rule_index=int(d["rule_index"]),
        map_target=tuple(d["map_target"]),
        flag_target=tuple(d["flag_target"]),
        is_cf=bool(d["is_cf"]),
        cf_meta=d.get("cf_meta"),
    )


def dumps_compact(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_records(path: str | Path, records: Iterable[DemoRecord]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_compact(record_to_dict(rec)) + "\n")


def read_records(path: str | Path) -> list[DemoRecord]:
    path = Path(path)
    out: list[DemoRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(record_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(path, line_no, f"bad record ({exc})") from exc
    return out


def load_dataset(path: str | Path) -> AugmentedDataset:
    records = read_records(path)
    n_cf = sum(1 for r in records if r.is_cf)
    return AugmentedDataset(
        records=tuple(records), n_original=len(records) - n_cf, n_cf=n_cf
    )


def schema_sidecar_path(dataset_path: str | Path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.name + ".schema.json")


def write_schema_sidecar(dataset_path: str | Path, world_cfg: WorldConfig) -> Path:
    """Feature order contract emitted next to every dataset file."""
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "filtered_obs": feature_schema(),
        "sensor_obs": {
            "ego_speed": "m/s",
            "detections": f"{world_cfg.detection_slots} x (rel_x m, rel_y m, rel_heading rad, speed m/s, kind code)",
            "visible_light_phase": "RED|YELLOW|GREEN|UNKNOWN",
            "route_context": f"{world_cfg.route_context_n} upcoming route points, ego frame, m",
        },
        "record_fields": [
            "sensor_obs", "filtered_obs", "action", "action_class", "scenario_id",
            "template", "seed", "time_step", "rule_index", "map_target", "flag_target",
            "is_cf", "cf_meta",
        ],
    }
    path = schema_sidecar_path(dataset_path)
    path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return path


def sha256_of(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    path: str | Path,
    stage: str,
    cfg: PipelineConfig,
    seed: int | None,
    artifacts: dict[str, str | Path],
    extra: dict[str, Any] | None = None,
) -> Path:
    """Run manifest: config snapshot, seed, artifact digests, stage metrics."""
    digests = {}
    for name, p in artifacts.items():
        p = Path(p)
        digests[name] = {"path": str(p), "sha256": sha256_of(p)}
    doc = {
        "stage": stage,
        "seed": seed,
        "config": cfg.snapshot(),
        "artifacts": digests,
    }
    if extra:
        doc.update(extra)
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def verify_manifest(path: str | Path) -> bool:
    """Check that every artifact referenced by a manifest still matches its digest."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for entry in doc.get("artifacts", {}).values():
        p = Path(entry["path"])
        if not p.is_file() or sha256_of(p) != entry["sha256"]:
            return False
    return True
