"""Python interface to the satmap toolkit.

The heavy lifting lives in the compiled ``_satmap`` extension; this package
re-exports it and adds small JSON conveniences.
"""

import json

from satmap._satmap import (  # noqa: F401
    __version__,
    chamfer_distance,
    equivalent_orderings,
    grad_check_model,
    hungarian,
    make_grid,
    map_score,
    meters_per_pixel,
    resample_polyline,
    train_toy,
    wgs84_to_world_px,
    world_px_to_wgs84,
    write_dataset,
)


def map_score_dict(pred_map: dict, gt_map: dict) -> dict:
    """Evaluate prediction/ground-truth vector maps given as dicts."""
    return json.loads(map_score(json.dumps(pred_map), json.dumps(gt_map)))


def train_toy_dict(data_dir: str, config: dict | None = None, steps: int = 100,
                   seed: int = 0) -> dict:
    """Train the toy model and return the trace as a dict."""
    cfg = json.dumps(config) if config else ""
    return json.loads(train_toy(data_dir, cfg, steps, seed))
