"""
Dataset generation stage: synthetic train and val splits on disk.
"""

import json
import logging
from pathlib import Path
from typing import Callable, Optional, Union

from src.core import dataset_io
from src.core.scene_generator import generate_scene
from src.pipeline.experiment import ExperimentConfig

logger = logging.getLogger(__name__)

DATASET_MANIFEST = "dataset.json"
SPLITS = ("train", "val")

PathLike = Union[str, Path]


def generate_dataset(
    cfg: ExperimentConfig,
    out_dir: PathLike,
    on_progress: Optional[Callable[[int, int], None]] = None,
) -> Path:
    """
    Write ``cfg.train_n`` train and ``cfg.val_n`` val frame pairs under ``out_dir``.

    Returns:
        The dataset root
    """
    out_dir = Path(out_dir)
    sizes = {"train": cfg.train_n, "val": cfg.val_n}
    total, done = sum(sizes.values()), 0
    logger.info(
        "Generating %d train + %d val pairs (%s layouts) in %s",
        cfg.train_n, cfg.val_n, cfg.diversity.value, out_dir,
    )
    for split in SPLITS:
        split_dir = out_dir / split
        for index in range(sizes[split]):
            scene_cfg = cfg.scene_for(split, index)
            sample = generate_scene(scene_cfg)
            dataset_io.save_sample(sample, dataset_io.sample_stem(split_dir, index), scene_cfg)
            done += 1
            if on_progress is not None:
                on_progress(done, total)
    manifest = {
        "area_half_extent": cfg.scene.area_half_extent,
        "dataset_hash": cfg.dataset_hash(),
        "val_split_hash": cfg.val_split_hash(),
        "config": cfg.model_dump(mode="json", include={"scene", "train_n", "val_n", "diversity",
                                                       "pairs_per_layout", "seed"}),
    }
    (out_dir / DATASET_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir


def dataset_area(dataset_dir: PathLike) -> float:
    """Area half extent the dataset was generated for."""
    dataset_dir = Path(dataset_dir)
    manifest = dataset_dir / DATASET_MANIFEST
    if manifest.exists():
        return float(json.loads(manifest.read_text())["area_half_extent"])
    for split in SPLITS:
        split_dir = dataset_dir / split
        if split_dir.is_dir():
            indices = dataset_io.list_sample_indices(split_dir)
            if indices:
                sidecar = dataset_io.load_sidecar(dataset_io.sample_stem(split_dir, indices[0]))
                if sidecar.get("config"):
                    return float(sidecar["config"]["area_half_extent"])
    raise FileNotFoundError(f"cannot determine the area of dataset {dataset_dir}")
