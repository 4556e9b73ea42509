"""Experiment drivers and artifact I/O for the command-line harness."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .errors import BoundsError, DomainError, IntegrityError
from .metrics import DecaySeries, chi2_between, chi2_to_uniform, fit_exponential_decay, total_variation
from .mottonen import prep_ops
from .noise import DeviceNoiseModel, apply_readout_array, evolve_density, insert_noise
from .qnn import QnnModel, accuracy, predict, strongly_entangling_layer
from .rng import make_rng
from .state import Circuit, clean_probabilities, run_statevector

PRESET_CHECKPOINTS = (1, 3, 6, 10, 15)
TABLE_LAYERS = (1, 3, 5, 7, 9)


# -- small I/O helpers -----------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_pgm(path, image: np.ndarray) -> Path:
    """Binary P5 graymap; ``image`` is scaled so its maximum maps to 255."""
    img = np.asarray(image, dtype=float)
    peak = img.max()
    scaled = np.zeros_like(img) if peak <= 0 else img / peak
    data = np.rint(np.clip(scaled, 0, 1) * 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())
    return Path(path)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise DomainError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


@dataclass
class RunManifest:
    command: list
    config: dict
    seed: int
    fixtures: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    started: float = field(default_factory=time.perf_counter)

    def add_fixture(self, path) -> None:
        self.fixtures[str(path)] = sha256_file(path)

    def write(self, out_dir) -> Path:
        """Atomically write ``manifest.json`` listing every output with its checksum."""
        out_dir = Path(out_dir)
        payload = {
            "artifact": "qnnlab",
            "version": __version__,
            "command": list(self.command),
            "config": self.config,
            "seed": self.seed,
            "fixtures": self.fixtures,
            "wallclock_s": round(time.perf_counter() - self.started, 3),
            "outputs": {name: sha256_file(out_dir / name) for name in self.outputs},
        }
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
        target = out_dir / "manifest.json"
        os.chmod(tmp, 0o644)
        os.replace(tmp, target)
        return target


def load_manifest(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"{path}: corrupt manifest ({exc})") from None
    if not isinstance(data, dict) or data.get("artifact") != "qnnlab" or not isinstance(data.get("outputs"), dict):
        raise IntegrityError(f"{path}: not a qnnlab manifest")
    return data


def verify_manifest(path) -> dict:
    data = load_manifest(path)
    base = Path(path).parent
    for name, digest in data["outputs"].items():
        target = base / name
        if not target.exists():
            raise IntegrityError(f"{path}: listed output {name} is missing")
        if sha256_file(target) != digest:
            raise IntegrityError(f"{path}: checksum mismatch for {name}")
    return data


def worker_count() -> int:
    cap = os.environ.get("QNNLAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def run_cells(fn: Callable, cells: Sequence, workers: int | None = None) -> list:
    """Evaluate independent grid cells, in a process pool when more than one worker is allowed."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
        return list(pool.map(fn, cells))


# -- degradation experiment ----------------------------------------------------------


@dataclass
class DegradeResult:
    device: str
    depths: np.ndarray
    chi2_uniform: np.ndarray  # (trials, depths)
    chi2_ref: np.ndarray
    checkpoints: dict  # depth -> (noisy probs, ideal probs) of trial 0
    rate: float | None
    r2: float | None
    fit_points: int

    def rows(self):
        for k, d in enumerate(self.depths):
            cu = self.chi2_uniform[:, k]
            cr = self.chi2_ref[:, k]
            yield (int(d), cu.mean(), cu.std(), cr.mean(), cr.std())


def degrade_input(kind: str, n_qubits: int, image: np.ndarray | None = None) -> np.ndarray:
    dim = 2**n_qubits
    if kind == "basis":
        out = np.zeros(dim)
        out[0] = 1.0
        return out
    if kind == "uniform":
        return np.full(dim, dim**-0.5)
    if kind == "image":
        if image is None:
            raise DomainError("image input requested but no encoded image given")
        return np.asarray(image, dtype=float)
    raise DomainError(f"unknown degradation input {kind!r}")


def _degrade_trial(trial, model, amplitudes, depth_max, seed, readout, checkpoints, prep_rho, readout_calib):
    n = amplitudes.size.bit_length() - 1
    weights = make_rng(seed, 0xDE6, trial).uniform(0.0, 2 * np.pi, size=(depth_max, n, 3))
    chi_u = np.zeros(depth_max)
    chi_r = np.zeros(depth_max)
    keep = {}
    rho = prep_rho.copy()
    psi = amplitudes.astype(complex)[None, :]
    for k in range(depth_max):
        layer = strongly_entangling_layer(weights[k], n)
        rho = evolve_density(insert_noise(Circuit(n, tuple(layer)), model).ops, n, rho)
        psi = run_statevector(layer, n, psi)
        noisy = clean_probabilities(np.diagonal(rho).real)
        if readout:
            noisy = clean_probabilities(apply_readout_array(noisy, readout_calib))
        ideal = clean_probabilities(np.abs(psi[0]) ** 2)
        chi_u[k] = chi2_to_uniform(noisy)
        chi_r[k] = chi2_between(noisy, ideal)
        if k + 1 in checkpoints:
            keep[k + 1] = (noisy, ideal)
    return chi_u, chi_r, keep


def run_degrade(
    model: DeviceNoiseModel,
    amplitudes: np.ndarray,
    depth_max: int = 60,
    trials: int = 10,
    seed: int = 0,
    readout: bool = False,
    checkpoints: Sequence[int] = (),
    workers: int = 1,
) -> DegradeResult:
    """Random-weight layer stacks on a noisy device versus their noise-free twins.

    Each trial draws ``depth_max`` layers with angles uniform in [0, 2pi); the
    depth-``d`` circuit is the embedding followed by the trial's first ``d``
    layers.  Distributions are taken from the density matrix before readout
    unless ``readout`` is set.  Checkpoint distributions come from trial 0.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    n = amplitudes.size.bit_length() - 1
    if depth_max < 1 or trials < 1:
        raise DomainError("depth_max and trials must be >= 1")
    prep = insert_noise(Circuit(n, tuple(prep_ops(amplitudes))), model)
    prep_rho = evolve_density(prep.ops, n)
    fn = partial(
        _degrade_trial, model=model, amplitudes=amplitudes, depth_max=depth_max, seed=seed,
        readout=readout, checkpoints=tuple(checkpoints), prep_rho=prep_rho, readout_calib=prep.readout,
    )
    out = run_cells(fn, list(range(trials)), workers)
    chi_u = np.stack([o[0] for o in out])
    chi_r = np.stack([o[1] for o in out])
    depths = np.arange(1, depth_max + 1)
    series = DecaySeries(depths, chi_u.mean(axis=0)).pre_floor()
    rate = r2 = None
    if series.value.size >= 5:
        rate, r2 = fit_exponential_decay(series)
    return DegradeResult(model.name, depths, chi_u, chi_r, out[0][2], rate, r2, int(series.value.size))


def count_violations(values: Sequence[float]) -> int:
    """Number of steps where a supposedly non-increasing series goes up."""
    v = np.asarray(values)
    return int(np.sum(np.diff(v) > 0))


# -- state-preparation images --------------------------------------------------------


def qubit_mask_indices(qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Basis indices whose only set bits belong to ``qubits`` (multiples of ``2**(n - 1 - max(qubits))``...)."""
    mask = 0
    for q in qubits:
        mask |= 1 << (n_qubits - 1 - q)
    idx = np.arange(2**n_qubits)
    return idx[(idx & ~mask) == 0]


@dataclass
class PrepResult:
    device: str
    probs: np.ndarray
    tv: float
    excess_index: int
    excess_value: float


def run_prep(model: DeviceNoiseModel | None, amplitudes: np.ndarray) -> PrepResult:
    """Measured distribution of the embedding circuit alone, compared with ``a**2``."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    n = amplitudes.size.bit_length() - 1
    ideal = amplitudes**2
    circuit = Circuit(n, tuple(prep_ops(amplitudes)))
    if model is None:
        probs = clean_probabilities(np.abs(run_statevector(circuit.ops, n)[0]) ** 2)
        name = "ideal"
    else:
        noisy = insert_noise(circuit, model)
        probs = clean_probabilities(np.diagonal(evolve_density(noisy.ops, n)).real)
        probs = clean_probabilities(apply_readout_array(probs, noisy.readout))
        name = model.name
    excess = np.clip(probs - ideal, 0, None)
    return PrepResult(name, probs, total_variation(probs, ideal), int(np.argmax(excess)), float(excess.max()))


# -- accuracy grid -------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalCell:
    model_path: str
    device_path: str | None
    noise_scale: float
    mnist_dir: str
    limit: int | None
    shots: int | None
    seed: int
    sample: int | None = None


def model_split(model: QnnModel) -> str:
    return {2: "0-1", 4: "0-3", 10: "0-9"}.get(model.n_classes, f"0-{model.n_classes - 1}")


def evaluate_cell(cell: EvalCell) -> dict:
    from .dataset import load_encoded
    from .noise import load_device_model
    from .qnn import load_model

    model = load_model(cell.model_path)
    split = model_split(model)
    data = load_encoded(cell.mnist_dir, "test", split, cell.limit)
    if cell.sample is not None and cell.sample < len(data):
        data = data.subset(subsample_indices(len(data), cell.sample, cell.seed))
    device = None
    name = "base"
    if cell.device_path is not None:
        device = load_device_model(cell.device_path)
        if cell.noise_scale != 1.0:
            device = device.scaled(cell.noise_scale)
        name = device.name
    pred = predict(data.amplitudes, model, device, cell.shots, cell.seed)
    return {
        "split": split,
        "layers": model.n_layers,
        "noise_model": name,
        "accuracy": accuracy(pred, data.labels),
        "n_samples": len(data),
        "shots": "" if cell.shots is None else cell.shots,
    }


def subsample_indices(size: int, count: int, seed: int) -> np.ndarray:
    """Seeded uniform subset of ``count`` test indices, kept in file order."""
    return np.sort(make_rng(seed, 0x5E1).choice(size, count, replace=False))


def table_rows(results: Sequence[dict]) -> tuple[list, list]:
    """Reshape long-form accuracies into the split-sectioned, layers-as-columns table."""
    layer_set = sorted({r["layers"] for r in results})
    header = ["split", "noise_model"] + [f"layers_{l}" for l in layer_set]
    rows = []
    for split in sorted({r["split"] for r in results}):
        names = []
        for r in results:
            if r["split"] == split and r["noise_model"] not in names and r["noise_model"] != "base":
                names.append(r["noise_model"])
        if any(r["split"] == split and r["noise_model"] == "base" for r in results):
            names.append("base")
        for name in names:
            cells = {r["layers"]: r["accuracy"] for r in results if r["split"] == split and r["noise_model"] == name}
            rows.append([split, name] + [cells.get(l, "") for l in layer_set])
    return header, rows


def missing_cells(results: Sequence[dict], layers: Sequence[int] = TABLE_LAYERS) -> list:
    """(split, noise_model, layers) combinations absent from the layer grid."""
    out = []
    for split in sorted({r["split"] for r in results}):
        names = sorted({r["noise_model"] for r in results if r["split"] == split})
        have = {(r["noise_model"], int(r["layers"])) for r in results if r["split"] == split}
        for name in names:
            out.extend((split, name, l) for l in layers if (name, l) not in have)
    return out


def check_image_index(index: int, count: int) -> None:
    if not 0 <= index < count:
        raise BoundsError(f"image index {index} outside [0, {count})")
