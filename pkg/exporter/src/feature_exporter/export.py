"""Forward an image-folder dataset through a pretrained backbone and dump
the embeddings in the engine's ALFV1 + manifest format.

The dataset directory holds one subdirectory per class; rows are ordered by
sorted relative file path, labels come from the subdirectory names. Output
rows are L2-normalized. The exporter is one-way: it writes the engine's
wire format and never imports the engine.
"""

from __future__ import annotations

import argparse
import json
import logging
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torchvision import transforms
from torchvision.models import get_model

log = logging.getLogger("feature_exporter")

MAGIC = b"ALFV1"
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp"}

# Attributes that hold the classification layer across torchvision families.
_CLASSIFIER_ATTRS = ("fc", "classifier", "heads", "head")


class ExportError(Exception):
    pass


@dataclass
class ExportJob:
    dataset_dir: str
    model_id: str = "resnet18"
    weights: str = "default"  # "default" (pretrained) | "none" (seeded random init)
    batch_size: int = 32
    device: str = "cpu"
    out_prefix: str = "export"
    overwrite: bool = False
    skip_undecodable: bool = False
    seed: int = 0


def discover_images(dataset_dir: str | Path) -> tuple[list[Path], list[int], list[str]]:
    """Sorted class dirs and sorted relative paths; order never depends on
    filesystem enumeration."""
    root = Path(dataset_dir)
    if not root.is_dir():
        raise ExportError(f"dataset directory {root} does not exist")
    class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not class_names:
        raise ExportError(f"{root} has no class subdirectories")
    paths: list[Path] = []
    labels: list[int] = []
    for label, name in enumerate(class_names):
        files = sorted(p for p in (root / name).rglob("*")
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        paths.extend(files)
        labels.extend([label] * len(files))
    if not paths:
        raise ExportError(f"{root} contains no images")
    order = np.argsort([str(p.relative_to(root)) for p in paths], kind="stable")
    return [paths[i] for i in order], [labels[i] for i in order], class_names


def build_backbone(model_id: str, weights: str, seed: int) -> torch.nn.Module:
    torch.manual_seed(seed)
    try:
        model = get_model(model_id, weights="DEFAULT" if weights == "default" else None)
    except Exception as exc:
        raise ExportError(f"cannot load model {model_id!r}: {exc}") from exc
    for attr in _CLASSIFIER_ATTRS:
        if hasattr(model, attr):
            setattr(model, attr, torch.nn.Identity())
            break
    else:
        raise ExportError(f"model {model_id!r} has no recognized classifier attribute")
    model.eval()
    return model


_TRANSFORM = transforms.Compose([
    transforms.Resize(224),
    transforms.CenterCrop(224),
    transforms.ToTensor(),
    transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
])


def load_batch(paths: list[Path], skip_undecodable: bool) -> tuple[torch.Tensor, list[int]]:
    tensors = []
    kept = []
    for i, path in enumerate(paths):
        try:
            with Image.open(path) as img:
                tensors.append(_TRANSFORM(img.convert("RGB")))
            kept.append(i)
        except (UnidentifiedImageError, OSError) as exc:
            if not skip_undecodable:
                raise ExportError(f"cannot decode {path}: {exc}") from exc
            log.warning("skipping undecodable image %s (%s)", path, exc)
    return (torch.stack(tensors) if tensors else torch.empty(0)), kept


def write_alfv1(matrix: np.ndarray, path: Path) -> None:
    n, d = matrix.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(matrix.astype("<f4", copy=False).tobytes(order="C"))


def export(job: ExportJob) -> tuple[Path, Path]:
    """Run the export; returns (feature file path, manifest path)."""
    feat_path = Path(f"{job.out_prefix}.alfv1")
    manifest_path = Path(f"{job.out_prefix}.manifest.json")
    for path in (feat_path, manifest_path):
        if path.exists() and not job.overwrite:
            raise ExportError(f"{path} already exists (pass overwrite to replace it)")

    paths, labels, class_names = discover_images(job.dataset_dir)
    model = build_backbone(job.model_id, job.weights, job.seed)
    device = torch.device(job.device)
    model.to(device)

    root = Path(job.dataset_dir)
    chunks: list[np.ndarray] = []
    kept_ids: list[str] = []
    kept_labels: list[int] = []
    with torch.no_grad():
        for start in range(0, len(paths), job.batch_size):
            batch_paths = paths[start : start + job.batch_size]
            batch, kept = load_batch(batch_paths, job.skip_undecodable)
            if not kept:
                continue
            feats = model(batch.to(device)).cpu().double().numpy()
            chunks.append(feats)
            kept_ids.extend(str(batch_paths[i].relative_to(root)) for i in kept)
            kept_labels.extend(labels[start + i] for i in kept)

    features = np.vstack(chunks)
    norms = np.linalg.norm(features, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ExportError(f"row {zero[0]} ({kept_ids[zero[0]]}) embeds to the zero vector")
    features = (features / norms[:, None]).astype(np.float32)

    write_alfv1(features, feat_path)
    manifest = {
        "ids": kept_ids,
        "labels": kept_labels,
        "num_classes": len(class_names),
        "feature_path": feat_path.name,
        "provenance": f"{job.model_id} (weights={job.weights}, seed={job.seed})",
        "feature_version": 0,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2))
    log.info("exported %d rows of dim %d to %s", features.shape[0], features.shape[1], feat_path)
    return feat_path, manifest_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feature-export", description=__doc__)
    # accepts an optional leading "export" token so both
    # `feature-export --dataset ...` and `feature-export export --dataset ...` work
    parser.add_argument("command", nargs="?", choices=["export"], default="export")
    parser.add_argument("--dataset", required=True, help="class-subdirectory image folder")
    parser.add_argument("--model", default="resnet18", help="torchvision model id")
    parser.add_argument("--weights", choices=["default", "none"], default="default")
    parser.add_argument("--out", required=True, help="output prefix for .alfv1 + manifest")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--seed", type=int, default=0, help="init seed when weights=none")
    parser.add_argument("--overwrite", action="store_true")
    parser.add_argument("--skip-undecodable", action="store_true",
                        help="log and skip images that fail to decode instead of aborting")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    job = ExportJob(dataset_dir=args.dataset, model_id=args.model, weights=args.weights,
                    batch_size=args.batch_size, device=args.device, out_prefix=args.out,
                    overwrite=args.overwrite, skip_undecodable=args.skip_undecodable,
                    seed=args.seed)
    try:
        feat_path, manifest_path = export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {feat_path} and {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
