"""Build, persist, and verify datasets of watermarked and clean generations.

Directory layout: out_dir/<resolution>/<label>/<index>.png with a JSON
manifest at out_dir/manifest.json and an optional digests.json sidecar
(sha256 per file, used by strict verification). Labels are "wm<id>" for
watermarked checkpoints and "clean" otherwise.

Verification never raises on a bad dataset: every problem becomes one
report entry. Checks per file run in a fixed order (missing -> digest ->
decodable -> resolution) and stop at the first failure, so each injected
fault surfaces as exactly one violation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint, load_checkpoint
from .errors import ImageDecodeError, ParameterError, ShapeError
from .imutils import from_uint8, to_uint8

MANIFEST_NAME = "manifest.json"
DIGESTS_NAME = "digests.json"
SCHEMA_VERSION = 1


@dataclass
class GwiManifest:
    root: Path
    entries: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def recompute_counts(self) -> dict:
        counts: dict = {}
        for e in self.entries:
            res = str(e["resolution"])
            counts.setdefault(res, {})
            counts[res][e["label"]] = counts[res].get(e["label"], 0) + 1
        return counts

    def select(self, label=None, split=None, resolution=None) -> list:
        out = []
        for e in self.entries:
            if label is not None and e["label"] != label:
                continue
            if split is not None and e["split"] != split:
                continue
            if resolution is not None and e["resolution"] != resolution:
                continue
            out.append(e)
        return out

    def paths(self, **kwargs) -> list:
        return [Path(self.root) / e["path"] for e in self.select(**kwargs)]

    def save(self):
        doc = {
            "schema_version": self.schema_version,
            "entries": self.entries,
            "counts": self.counts,
        }
        (Path(self.root) / MANIFEST_NAME).write_text(json.dumps(doc, indent=2))

    @staticmethod
    def load(root_or_manifest) -> "GwiManifest":
        path = Path(root_or_manifest)
        if path.is_dir():
            path = path / MANIFEST_NAME
        doc = json.loads(path.read_text())
        return GwiManifest(
            root=path.parent,
            entries=doc["entries"],
            counts=doc["counts"],
            schema_version=doc["schema_version"],
        )


def save_image(pixels: np.ndarray, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(pixels).transpose(1, 2, 0), mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:  # PIL raises a zoo of types for corrupt files
        raise ImageDecodeError(path, str(exc)) from exc
    return from_uint8(arr.transpose(2, 0, 1))


def load_images(paths) -> np.ndarray:
    """Decode a list of files into one (B, 3, H, W) batch in [-1, 1]."""
    paths = list(paths)
    if not paths:
        raise ParameterError("load_images: empty path list")
    images = [load_image(p) for p in paths]
    shape = images[0].shape
    for p, img in zip(paths, images):
        if img.shape != shape:
            raise ShapeError(
                f"mixed resolutions in one batch: {img.shape} at {p} vs {shape}"
            )
    return np.stack(images)


def load_images_from_manifest(manifest: GwiManifest, **select) -> np.ndarray:
    return load_images(manifest.paths(**select))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_dataset(checkpoints, per_label_count: int, out_dir,
                  base_seed: int = 0, train_fraction: float = 0.8,
                  digests: bool = True) -> GwiManifest:
    """Generate per_label_count images per checkpoint label and index them.

    Expects one checkpoint per (model kind, watermark id) plus a clean
    checkpoint for every resolution present. Deterministic for a fixed
    base_seed.
    """
    if per_label_count < 0:
        raise ParameterError("per_label_count must be >= 0")
    loaded: list[Checkpoint] = []
    for c in checkpoints:
        loaded.append(c if isinstance(c, Checkpoint) else load_checkpoint(c))
    if not loaded:
        raise ParameterError("no checkpoints given")

    seen = set()
    resolutions = set()
    for ck in loaded:
        label = "clean" if not ck.is_watermarked else f"wm{ck.watermark_id}"
        key = (ck.resolution, ck.kind if label != "clean" else "clean", label)
        if key in seen:
            raise ParameterError(f"duplicate checkpoint for {key}")
        seen.add(key)
        resolutions.add(ck.resolution)
    for res in sorted(resolutions):
        if not any(k[0] == res and k[2] == "clean" for k in seen):
            raise ParameterError(f"missing clean checkpoint for resolution {res}")

    from .pipeline import generate_watermarked

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = GwiManifest(root=out_dir)
    digest_map = {}
    for ci, ck in enumerate(loaded):
        label = "clean" if not ck.is_watermarked else f"wm{ck.watermark_id}"
        seed = base_seed + 7919 * ci
        images = generate_watermarked(ck, per_label_count, seed=seed)
        n_train = int(round(per_label_count * train_fraction))
        for i in range(per_label_count):
            rel = Path(str(ck.resolution)) / label / f"{i:05d}.png"
            save_image(images[i], out_dir / rel)
            if digests:
                digest_map[str(rel)] = _sha256(out_dir / rel)
            manifest.entries.append({
                "path": str(rel),
                "model_kind": ck.kind,
                "label": label,
                "watermark_id": ck.watermark_id,
                "resolution": ck.resolution,
                "split": "train" if i < n_train else "test",
                "seed": seed,
            })
    manifest.counts = manifest.recompute_counts()
    manifest.save()
    if digests:
        (out_dir / DIGESTS_NAME).write_text(json.dumps(digest_map, indent=2))
    return manifest


@dataclass
class VerificationReport:
    violations: list = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, path: str, detail: str = ""):
        self.violations.append({"kind": kind, "path": path, "detail": detail})

    def as_text(self) -> str:
        if self.ok:
            return f"OK: {self.checked} files verified, zero violations"
        lines = [f"{len(self.violations)} violation(s) over {self.checked} files:"]
        for v in self.violations:
            lines.append(f"  [{v['kind']}] {v['path']} {v['detail']}".rstrip())
        return "\n".join(lines)


def verify_manifest(manifest, strict: bool = False) -> VerificationReport:
    """Check existence, (strict) digests, decodability, resolution, counts.

    Failures become report entries; at most one per file.
    """
    if not isinstance(manifest, GwiManifest):
        manifest = GwiManifest.load(manifest)
    report = VerificationReport()
    digest_map = None
    if strict:
        sidecar = Path(manifest.root) / DIGESTS_NAME
        digest_map = json.loads(sidecar.read_text()) if sidecar.exists() else {}

    for entry in manifest.entries:
        report.checked += 1
        rel = entry["path"]
        path = Path(manifest.root) / rel
        if not path.exists():
            report.add("missing-file", rel)
            continue
        if strict:
            recorded = digest_map.get(rel)
            if recorded is None:
                report.add("missing-digest", rel)
                continue
            if _sha256(path) != recorded:
                report.add("digest-mismatch", rel)
                continue
        try:
            img = load_image(path)
        except ImageDecodeError as exc:
            report.add("undecodable", rel, str(exc))
            continue
        if img.shape[-1] != entry["resolution"] or img.shape[-2] != entry["resolution"]:
            report.add("wrong-resolution", rel,
                       f"{img.shape[-2:]} != {entry['resolution']}")

    stored = manifest.counts
    recomputed = manifest.recompute_counts()
    if stored != recomputed:
        report.add("count-mismatch", MANIFEST_NAME,
                   f"stored {stored} != recomputed {recomputed}")
    return report
