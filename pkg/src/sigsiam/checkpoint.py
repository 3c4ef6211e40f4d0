"""Model files: one ``.npz`` archive per trained pipeline.

Arrays are stored under flat names (``stack/0/weights``, ``bank/sim_features``
and so on); everything else lives in a JSON document stored as the
``meta.json`` entry.  Loading never unpickles.  See docs/checkpoint.md for the
full key list.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from . import __version__, nn
from .compressor import AutoencoderStack
from .config import RunConfig
from .errors import SchemaError
from .features import BinarizationThresholds, FeatureLayout, MinMaxScaling
from .inference import ReferenceBank
from .pipeline import TrainedPipeline
from .siamese import SiameseHead

FORMAT = "sigsiam-model"
FORMAT_VERSION = 1


def _layer_meta(prefix: str, layers: list[nn.DenseLayer], arrays: dict) -> list[dict]:
    out = []
    for k, layer in enumerate(layers):
        arrays[f"{prefix}/{k}/weights"] = layer.weights
        arrays[f"{prefix}/{k}/biases"] = layer.biases
        out.append({"activation": layer.activation, "frozen": layer.frozen, "shape": list(layer.weights.shape)})
    return out


def _load_layers(prefix: str, meta: list[dict], arrays) -> list[nn.DenseLayer]:
    layers = []
    for k, info in enumerate(meta):
        w = arrays[f"{prefix}/{k}/weights"]
        if list(w.shape) != info["shape"]:
            raise SchemaError(f"{prefix} layer {k}: stored shape {list(w.shape)} != declared {info['shape']}")
        layers.append(nn.DenseLayer(w, arrays[f"{prefix}/{k}/biases"], info["activation"], info["frozen"]))
    return layers


def pipeline_to_arrays(pipe: TrainedPipeline, extra: dict | None = None) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {
        "active": pipe.active,
        "zeroed": pipe.zeroed,
        "bank/weight_basis": pipe.bank.weight_basis,
        "bank/sim_features": pipe.bank.sim_features,
        "bank/labels": pipe.bank.labels,
    }
    if isinstance(pipe.preprocessor, BinarizationThresholds):
        preprocessor = "median"
        arrays["preprocess/medians"] = pipe.preprocessor.medians
    else:
        preprocessor = "minmax"
        arrays["preprocess/low"] = pipe.preprocessor.low
        arrays["preprocess/high"] = pipe.preprocessor.high
    meta = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "config": pipe.config.to_dict(),
        "layout": pipe.layout.to_dict(),
        "preprocessor": preprocessor,
        "stack": None,
        "head": _layer_meta("head", [pipe.head.fc1, pipe.head.cls_head], arrays),
        "bank": {"subject_ids": list(pipe.bank.subject_ids), "weighting": pipe.bank.weighting},
        "extra": extra or {},
    }
    if pipe.stack is not None:
        meta["stack"] = {"stage": pipe.stack.stage, "layers": _layer_meta("stack", pipe.stack.layers, arrays)}
    arrays["meta.json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    return arrays


def save_pipeline(pipe: TrainedPipeline, path: str | Path, extra: dict | None = None) -> Path:
    """Write ``pipe`` to ``path`` atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, **pipeline_to_arrays(pipe, extra))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load_pipeline(path: str | Path) -> tuple[TrainedPipeline, dict]:
    """Read a model file; returns the pipeline and the stored ``extra`` dict."""
    try:
        arrays = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise SchemaError(f"cannot read model file {path}: {exc}") from None
    with arrays:
        if "meta.json" not in arrays.files:
            raise SchemaError(f"{path} is not a model file (no metadata)")
        meta = json.loads(arrays["meta.json"].tobytes().decode("utf-8"))
        if meta.get("format") != FORMAT:
            raise SchemaError(f"{path} is not a model file")
        if meta.get("format_version") != FORMAT_VERSION:
            raise SchemaError(f"unsupported model format version {meta.get('format_version')}")
        config = RunConfig.from_dict(meta["config"])
        layout = FeatureLayout(**meta["layout"])
        if meta["preprocessor"] == "median":
            pre = BinarizationThresholds(arrays["preprocess/medians"])
        else:
            pre = MinMaxScaling(arrays["preprocess/low"], arrays["preprocess/high"])
        stack = None
        if meta["stack"] is not None:
            stack = AutoencoderStack(_load_layers("stack", meta["stack"]["layers"], arrays), meta["stack"]["stage"])
        fc1, cls_head = _load_layers("head", meta["head"], arrays)
        bank = ReferenceBank(
            tuple(meta["bank"]["subject_ids"]),
            arrays["bank/weight_basis"],
            arrays["bank/sim_features"],
            arrays["bank/labels"],
            meta["bank"]["weighting"],
        )
        pipe = TrainedPipeline(
            config, layout, arrays["active"], arrays["zeroed"], pre, stack, SiameseHead(fc1, cls_head), bank
        )
    return pipe, meta["extra"]
