"""Dataset build and instruction emission on disk.

A build writes ``images/``, ``masks/``, one part file per finished scene under
``parts/``, and finally ``manifest.jsonl`` assembled in cell order. Scene
outputs depend only on the scene spec and the caption seed, so worker count
and completion order never change the bytes written.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .captions import SynonymPools, caption_rng, default_pools, generate_caption, load_pools
from .composer import ProtocolConfig, compose_scene, enumerate_grid, threat_groups
from .errors import IoFailure
from .instruct import (
    InstructionRecord, LetterBalancer, gen_grounding, gen_referring, gen_scene_comprehension,
    gen_vqa_mcq, mcq_records,
)
from .render import bbox_of, render, threat_mask, to_uint8
from .scene import SceneSpec

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"


@dataclass(frozen=True)
class BuildConfig:
    output_dir: str
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    colorize: bool = True
    masks: bool = True
    pools_path: Optional[str] = None
    caption_seed: int = 0
    tasks: tuple = ("scene", "refer", "grounding", "vqa")
    instruct_seed: int = 0
    validate_seed: int = 1
    validate_threshold: float = 0.7
    vqa_freeform: Optional[dict] = None
    workers: int = 1

    def __post_init__(self):
        if any(v < 64 for v in self.protocol.image_size):
            raise ValueError("image_size must be at least 64 in each dimension")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        bad = set(self.tasks) - {"scene", "refer", "grounding", "vqa"}
        if bad:
            raise ValueError(f"unknown tasks: {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "BuildConfig":
        d = dict(d)
        render_opts = d.pop("render", {}) or {}
        captions = d.pop("captions", {}) or {}
        instruct = d.pop("instruct", {}) or {}
        validate = d.pop("validate", {}) or {}
        protocol = ProtocolConfig.from_dict(d.pop("protocol", {}) or {})
        unknown = set(d) - {"output_dir", "vqa_freeform", "workers"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            output_dir=d.get("output_dir", "out"),
            protocol=protocol,
            colorize=render_opts.get("colorize", True),
            masks=render_opts.get("masks", True),
            pools_path=captions.get("pools"),
            caption_seed=int(captions.get("seed", 0)),
            tasks=tuple(instruct.get("tasks", ("scene", "refer", "grounding", "vqa"))),
            instruct_seed=int(instruct.get("seed", 0)),
            validate_seed=int(validate.get("seed", 1)),
            validate_threshold=float(validate.get("threshold", 0.7)),
            vqa_freeform=d.get("vqa_freeform"),
            workers=int(d.get("workers", 1)),
        )

    def fingerprint(self) -> str:
        """Hash of everything that shapes scene outputs (not workers or paths)."""
        payload = {"protocol": self.protocol.to_dict(), "colorize": self.colorize, "masks": self.masks,
                   "pools": _pools_text(self.pools_path), "caption_seed": self.caption_seed}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _pools_text(path) -> Optional[str]:
    return None if path is None else Path(path).read_text(encoding="utf-8")


def scene_id(index: int) -> str:
    return f"scene_{index:06d}"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def build_record(spec: SceneSpec, sid: str, pools: SynonymPools, caption_seed: int,
                 colorize: bool = True):
    """Compose, render and caption one scene.

    Returns ``(record, image, masks)``: the manifest dict, an 8-bit image and
    one boolean mask per threat instance.
    """
    vol, md, items = compose_scene(spec)
    scan = render(vol, spec.image_size)
    image = scan.rgb() if colorize else scan.gray()
    masks, boxes = [], []
    for group in threat_groups(items):
        m = threat_mask(group, spec.volume_dims, spec.image_size)
        masks.append(m)
        boxes.append(list(bbox_of(m)))
    caption = generate_caption(md, pools, caption_rng(caption_seed, sid)).text
    record = {
        "id": sid,
        "spec": spec.to_dict(),
        "metadata": md.to_dict(),
        "image_path": f"images/{sid}.png",
        "mask_paths": [f"masks/{sid}_{i}.png" for i in range(len(masks))],
        "boxes_px": boxes,
        "caption": caption,
        "image_size": list(spec.image_size),
    }
    return record, image, masks


def _save_png(array: np.ndarray, path: Path) -> None:
    Image.fromarray(array).save(path, format="PNG", optimize=False)


# per-process state for workers
_WORKER: dict = {}


def _init_worker(out_dir: str, pools_path, caption_seed: int, colorize: bool, write_masks: bool):
    _WORKER.update(out=Path(out_dir), pools=load_pools(pools_path) if pools_path else default_pools(),
                   seed=caption_seed, colorize=colorize, masks=write_masks)


def _run_scene(job) -> str:
    index, spec_dict = job
    w = _WORKER
    sid = scene_id(index)
    record, image, masks = build_record(SceneSpec.from_dict(spec_dict), sid, w["pools"], w["seed"],
                                        w["colorize"])
    out = w["out"]
    _save_png(image, out / record["image_path"])
    if w["masks"]:
        for m, rel in zip(masks, record["mask_paths"]):
            _save_png(to_uint8(m.astype(np.float64)), out / rel)
    else:
        record["mask_paths"] = []
    part = out / "parts" / f"{sid}.json"
    tmp = part.with_suffix(".tmp")
    tmp.write_text(dumps(record), encoding="utf-8")
    os.replace(tmp, part)
    return sid


def build_dataset(config: BuildConfig, progress=None) -> Path:
    """Run the full build; finished scenes from an earlier run are reused."""
    out = Path(config.output_dir)
    try:
        for sub in ("images", "masks", "parts"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {out}: {exc}") from exc

    stamp = out / "parts" / "config.sha256"
    fp = config.fingerprint()
    if stamp.exists() and stamp.read_text().strip() != fp:
        log.info("configuration changed; discarding finished scenes")
        shutil.rmtree(out / "parts")
        (out / "parts").mkdir()
    stamp.write_text(fp + "\n")

    specs = enumerate_grid(config.protocol)
    todo = [(i, s.to_dict()) for i, s in enumerate(specs)
            if not (out / "parts" / f"{scene_id(i)}.json").exists()]
    log.info("%d scenes, %d to render", len(specs), len(todo))
    init = (str(out), config.pools_path, config.caption_seed, config.colorize, config.masks)
    done = len(specs) - len(todo)
    if config.workers == 1:
        _init_worker(*init)
        for job in todo:
            _run_scene(job)
            done += 1
            if progress:
                progress(done, len(specs))
    else:
        with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=init) as pool:
            for _ in pool.map(_run_scene, todo, chunksize=max(1, len(todo) // (config.workers * 8))):
                done += 1
                if progress:
                    progress(done, len(specs))

    manifest = out / MANIFEST
    tmp = manifest.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(specs)):
            fh.write((out / "parts" / f"{scene_id(i)}.json").read_text(encoding="utf-8") + "\n")
    os.replace(tmp, manifest)
    return manifest


def read_jsonl(path) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def write_jsonl(path, rows) -> None:
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(dumps(row) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


_TASK_STREAM = {"scene": 0, "refer": 1, "grounding": 2, "vqa": 3, "vqa_freeform": 4}


def record_rng(seed: int, record_id: str, task: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(record_id.encode("utf-8")), _TASK_STREAM[task]])
    return np.random.Generator(np.random.Philox(ss))


def instructions(manifest: Sequence[dict], task: str, seed: int = 0,
                 pools: Optional[SynonymPools] = None, client=None) -> list[InstructionRecord]:
    """All instruction records of one task for a manifest, in manifest order."""
    out: list[InstructionRecord] = []
    balancer = LetterBalancer()
    for rec in manifest:
        rng = record_rng(seed, rec["id"], task)
        if task == "scene":
            out.append(gen_scene_comprehension(rec, rng))
        elif task == "refer":
            out.extend(gen_referring(rec, rng))
        elif task == "grounding":
            out.append(gen_grounding(rec, rng, pools))
        elif task == "vqa":
            out.extend(mcq_records(rec, gen_vqa_mcq(rec, rng, balancer)))
        elif task == "vqa_freeform":
            from .instruct import Turn, gen_vqa_freeform

            turns = gen_vqa_freeform(rec["caption"], client)
            out.append(InstructionRecord(f"{rec['id']}-vqachat", rec["image_path"], "vqa", tuple(turns)))
        else:
            raise ValueError(f"unknown task {task!r}")
    return out


def write_instructions(manifest: Sequence[dict], tasks: Sequence[str], out_dir, seed: int = 0,
                       pools: Optional[SynonymPools] = None, client=None) -> dict[str, Path]:
    paths = {}
    for task in tasks:
        rows = [r.to_dict() for r in instructions(manifest, task, seed, pools, client)]
        path = Path(out_dir) / f"instructions_{task}.jsonl"
        write_jsonl(path, rows)
        paths[task] = path
    return paths


def stats(manifest: Sequence[dict]) -> dict:
    """Instance counts per category and single/multi/non-threat image counts."""
    per_cat: dict[str, int] = {}
    single = multi = none = 0
    for rec in manifest:
        threats = rec["metadata"]["threats"]
        for t in threats:
            per_cat[t["category"]] = per_cat.get(t["category"], 0) + 1
        if not threats:
            none += 1
        elif len(threats) == 1:
            single += 1
        else:
            multi += 1
    return {"images": len(manifest), "single_threat_images": single, "multi_threat_images": multi,
            "nonthreat_images": none, "threat_instances": sum(per_cat.values()),
            "instances_per_category": dict(sorted(per_cat.items()))}
