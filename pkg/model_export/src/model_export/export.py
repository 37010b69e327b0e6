"""Export truncated feature networks into bmodelab's portable model format.

Each export builds a Keras classification network, cuts it at its feature
tap (InceptionV3: the global average pool feeding the classifier head,
2048-d; VGG19: the first fully connected layer, 4096-d), and writes three
artifacts into ``<out>/<name>/``:

- ``saved_model/``          the truncated graph with a serving signature,
- ``manifest.json``         what bmodelab's feature adapter needs to run it,
- ``reference_features.f32`` the exported model's output for the shipped
                            all-gray validation image, for cross-checking.

Before anything is kept, the exported graph is run on the validation image
and compared against the in-framework model; a disagreement above 1e-4
max-abs aborts the export.

Weights: pass a local weights file (or "imagenet" when downloads are
possible). With no weights the network is initialized from a fixed seed,
which keeps every artifact, checksum included, reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from bmodelab.data_io import read_pgm
from bmodelab.features import ExtractorSpec, KIND_PORTABLE, extract_features
from bmodelab.prep import (NetworkPreprocessSpec, builtin_preprocess_specs,
                           resize_for_network, to_network_input)


class ExportError(RuntimeError):
    """Export could not be produced or failed its self-verification."""


@dataclass(frozen=True)
class NetworkDef:
    key: str
    extractor_id: str
    preprocess: str  # bmodelab preprocess spec name
    tap_layer: str
    tap_description: str
    expected_dim: int
    export_dirname: str


NETWORKS: dict[str, NetworkDef] = {
    "inceptionv3": NetworkDef(
        key="inceptionv3",
        extractor_id="inception_v3_avg_pool",
        preprocess="inception_v3",
        tap_layer="avg_pool",
        tap_description="global average pool feeding the classifier head",
        expected_dim=2048,
        export_dirname="inception_v3"),
    "vgg19": NetworkDef(
        key="vgg19",
        extractor_id="vgg19_fc1",
        preprocess="vgg19",
        tap_layer="fc1",
        tap_description="first fully connected layer",
        expected_dim=4096,
        export_dirname="vgg19"),
}


def _network_def(network: str) -> NetworkDef:
    try:
        return NETWORKS[network]
    except KeyError:
        raise ExportError(f"unknown network {network!r}; "
                          f"choose from {sorted(NETWORKS)}") from None


def _tensorflow():
    try:
        import tensorflow as tf
    except ImportError as exc:
        raise ExportError("tensorflow is required to build and export "
                          "networks") from exc
    return tf


def build_network(network: str, *, weights: str | None = None, seed: int = 0):
    """Keras model truncated at the network's feature tap.

    ``weights`` is forwarded to the architecture constructor (a file path,
    or "imagenet" where downloadable); None initializes from ``seed`` so
    offline exports are reproducible.
    """
    ndef = _network_def(network)
    tf = _tensorflow()
    tf.keras.utils.set_random_seed(seed)
    builders = {"inceptionv3": tf.keras.applications.InceptionV3,
                "vgg19": tf.keras.applications.VGG19}
    try:
        base = builders[ndef.key](weights=weights, include_top=True)
    except Exception as exc:
        raise ExportError(
            f"cannot build {network} with weights={weights!r}: {exc}") from exc
    tap = base.get_layer(ndef.tap_layer).output
    return tf.keras.Model(base.input, tap, name=f"{ndef.export_dirname}_tap")


def weights_checksum(model) -> str:
    """Order-sensitive digest over every weight array of the model."""
    digest = hashlib.sha256()
    for array in model.get_weights():
        arr = np.ascontiguousarray(array)
        digest.update(str(arr.shape).encode())
        digest.update(str(arr.dtype).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def validation_image_path() -> Path:
    ref = resources.files("model_export").joinpath("assets/validation_image.pgm")
    with resources.as_file(ref) as path:
        return Path(path)


def validation_input(prep: NetworkPreprocessSpec) -> np.ndarray:
    """The shipped gray image mapped to one network input plane."""
    image = read_pgm(validation_image_path())
    return to_network_input(resize_for_network(image, prep), prep)


def export(network: str, out_root: str | Path, *,
           weights: str | None = None, seed: int = 0) -> dict:
    """Write saved_model/, manifest.json and reference_features.f32.

    Returns the manifest dict. Raises ExportError when the framework is
    missing, the tap shape disagrees with the preprocess configuration,
    or the exported graph fails the validation-image comparison.
    """
    ndef = _network_def(network)
    prep = builtin_preprocess_specs()[ndef.preprocess]
    tf = _tensorflow()

    model = build_network(network, weights=weights, seed=seed)
    got_dim = int(model.output.shape[-1])
    if got_dim != ndef.expected_dim:
        raise ExportError(f"{network} tap {ndef.tap_layer!r} yields {got_dim} "
                          f"features, expected {ndef.expected_dim}")
    got_size = int(model.input.shape[1])
    if got_size != prep.input_size:
        raise ExportError(
            f"preprocess spec {prep.name!r} is configured for input size "
            f"{prep.input_size}, but {network} takes {got_size}")

    out_dir = Path(out_root) / ndef.export_dirname
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        model.export(str(out_dir / "saved_model"), verbose=False)
    except TypeError:  # older export() without a verbose switch
        model.export(str(out_dir / "saved_model"))

    manifest = {
        "extractor_id": ndef.extractor_id,
        "format": "tf_saved_model",
        "model": "saved_model",
        "layout": "nhwc",
        "source_network": ndef.key,
        "tap": ndef.tap_description,
        "input_size": prep.input_size,
        "preprocess": prep.name,
        "expected_dim": ndef.expected_dim,
        "weights_checksum": weights_checksum(model),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    # self-verification: the exported graph must reproduce the framework
    net_input = validation_input(prep)
    batch = net_input.astype(np.float32)[np.newaxis]
    framework = np.asarray(model(tf.constant(batch))).ravel().astype(np.float32)
    spec = ExtractorSpec(extractor_id=ndef.extractor_id, kind=KIND_PORTABLE,
                         expected_dim=ndef.expected_dim,
                         model_path=str(out_dir))
    portable = extract_features(net_input, spec).values.astype(np.float32)
    gap = float(np.max(np.abs(portable - framework)))
    if gap > 1e-4:
        raise ExportError(f"export verification failed for {network}: "
                          f"max-abs gap {gap:g} above 1e-4")
    (out_dir / "reference_features.f32").write_bytes(
        portable.astype("<f4").tobytes())
    return manifest
