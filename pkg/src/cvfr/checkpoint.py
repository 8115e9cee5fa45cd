"""Model checkpoints: a key=value text header followed by raw float64 payloads.

Layout::

    cvfr-checkpoint
    format_version=1
    n=49
    ...
    payload.psi=0:49x49
    payload.eigvals=19208:49
    end_header
    <little-endian float64 bytes>

Payload offsets are in bytes from the first byte after ``end_header\\n``.
Scalars are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .attractors import AttractorSet, make_attractor_set, solve_alphabet
from .dynamics import IntegrationConfig
from .errors import CheckpointError
from .spectral import SpectralCoupling

MAGIC = "cvfr-checkpoint"
FORMAT_VERSION = 1
_F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    coupling: SpectralCoupling
    patterns: np.ndarray
    integration: IntegrationConfig
    class_lambdas: np.ndarray | None = None
    train_seed: int = 0
    metadata: dict[str, str] = field(default_factory=dict)

    @cached_property
    def attractors(self) -> AttractorSet:
        sc = self.coupling
        alphabet = solve_alphabet(sc.lambda_planted, sc.c, sc.beta)
        lams = None if self.class_lambdas is None else list(self.class_lambdas)
        return make_attractor_set(self.patterns, alphabet, lams)

    @property
    def sigma(self) -> float:
        return self.integration.sigma

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            coupling=self.coupling.copy(),
            patterns=self.patterns.copy(),
            integration=self.integration,
            class_lambdas=None if self.class_lambdas is None else self.class_lambdas.copy(),
            train_seed=self.train_seed,
            metadata=dict(self.metadata),
        )


def save(ckpt: Checkpoint, path) -> None:
    sc = ckpt.coupling
    cfg = ckpt.integration
    arrays = {
        "psi": sc.psi,
        "eigvals": sc.eigvals,
        "frozen_cols": sc.frozen_cols.astype(np.float64),
        "patterns": ckpt.patterns,
    }
    if ckpt.class_lambdas is not None:
        arrays["class_lambdas"] = np.asarray(ckpt.class_lambdas, dtype=np.float64)

    header = [
        MAGIC,
        f"format_version={FORMAT_VERSION}",
        f"n={sc.n}",
        f"k={sc.k}",
        f"lambda_planted={sc.lambda_planted!r}",
        f"c={sc.c!r}",
        f"beta={sc.beta!r}",
        f"coupling_seed={sc.seed}",
        f"dt={cfg.dt!r}",
        f"steps={cfg.steps}",
        f"sigma={cfg.sigma!r}",
        f"integration_seed={cfg.seed}",
        f"train_seed={ckpt.train_seed}",
        f"meta.cvfr_version={__version__}",
    ]
    for key in sorted(ckpt.metadata):
        if key == "cvfr_version":
            continue
        value = str(ckpt.metadata[key]).replace("\n", " ")
        header.append(f"meta.{key}={value}")
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=_F64)
        shape = "x".join(str(d) for d in arr.shape)
        header.append(f"payload.{name}={offset}:{shape}")
        blobs.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for b in blobs:
            fh.write(b)


def _parse_header(raw: bytes, path):
    marker = b"\nend_header\n"
    end = raw.find(marker)
    if end < 0:
        raise CheckpointError("no end_header line", path=path)
    lines = raw[:end].decode("utf-8").split("\n")
    if lines[0] != MAGIC:
        raise CheckpointError(f"not a checkpoint (first line {lines[0]!r})", path=path, offset=0)
    fields = {}
    for line in lines[1:]:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed header line {line!r}", path=path)
        fields[key] = value
    return fields, end + len(marker)


def load(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc.strerror}", path=path) from exc
    fields, start = _parse_header(raw, path)
    version = int(fields.get("format_version", -1))
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"format_version {version} is not supported (expected {FORMAT_VERSION})", path=path
        )
    payload = {}
    for key, value in fields.items():
        if not key.startswith("payload."):
            continue
        off, _, shape = value.partition(":")
        dims = tuple(int(d) for d in shape.split("x")) if shape else ()
        count = int(np.prod(dims, dtype=np.int64))
        begin = start + int(off)
        if begin + 8 * count > len(raw):
            raise CheckpointError(f"payload {key} runs past end of file", path=path, offset=begin)
        payload[key[8:]] = np.frombuffer(raw, dtype=_F64, count=count, offset=begin).reshape(dims).copy()
    try:
        n, k = int(fields["n"]), int(fields["k"])
        sc = SpectralCoupling(
            n=n,
            k=k,
            psi=payload["psi"],
            eigvals=payload["eigvals"],
            lambda_planted=float(fields["lambda_planted"]),
            c=float(fields["c"]),
            beta=float(fields["beta"]),
            frozen_cols=payload["frozen_cols"] != 0.0,
            seed=int(fields["coupling_seed"]),
        )
        cfg = IntegrationConfig(
            dt=float(fields["dt"]),
            steps=int(fields["steps"]),
            sigma=float(fields["sigma"]),
            seed=int(fields["integration_seed"]),
        )
        patterns = payload["patterns"]
    except KeyError as exc:
        raise CheckpointError(f"missing field {exc.args[0]!r}", path=path) from exc
    if sc.psi.shape != (n, n) or sc.eigvals.shape != (n,) or patterns.shape != (k, n):
        raise CheckpointError("payload shapes do not match n/k", path=path)
    meta = {key[5:]: v for key, v in fields.items() if key.startswith("meta.")}
    return Checkpoint(
        coupling=sc,
        patterns=patterns,
        integration=cfg,
        class_lambdas=payload.get("class_lambdas"),
        train_seed=int(fields.get("train_seed", 0)),
        metadata=meta,
    )
