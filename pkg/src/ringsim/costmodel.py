"""Analytic matmul-FLOP cost model for ring vs striped scheduling.

Counts, per token and per layer, the matmul FLOPs of a decoder transformer
split into pairwise attention work (which grows with sequence length and
is where the two schedules differ) and everything else (projections, MLP,
amortized output logits). The headline number is the best-case speedup of
the striped schedule over the contiguous one for a whole training step:
the ratio of weighted critical-path FLOPs, treating communication as fully
hidden behind compute. Attention FLOPs can be weighted (e.g. 2x) to model
hardware that executes them in a costlier precision than the rest.

The reference speedup tables this model reproduces are transcribed in
``data/tms_appendix.csv``; ``compare_golden`` recomputes every row.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

_GOLDEN_RESOURCE = "data/tms_appendix.csv"
PRESET_FIELDS = ("n_vocab", "d_model", "d_ff", "n_layer", "n_head")
SPEEDUP_TOLERANCE = 0.02  # reference tables print 2 decimals


@dataclass(frozen=True)
class ModelPreset:
    """Decoder-transformer hyperparameters the FLOP model needs."""

    name: str
    n_vocab: int
    d_model: int
    d_ff: int
    n_layer: int
    n_head: int

    def __post_init__(self):
        for field_name in PRESET_FIELDS:
            if getattr(self, field_name) < 1:
                raise ValueError(f"{field_name} must be positive")


PRESETS = {
    "1b": ModelPreset("1b", n_vocab=32000, d_model=2048, d_ff=5504, n_layer=22, n_head=16),
    "3b": ModelPreset("3b", n_vocab=32000, d_model=3200, d_ff=8640, n_layer=26, n_head=32),
    "7b": ModelPreset("7b", n_vocab=32000, d_model=4096, d_ff=11008, n_layer=32, n_head=32),
}


def load_preset(path) -> ModelPreset:
    """Read a preset from a JSON file keyed by the hyperparameter names."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        raw = json.load(fh)
    missing = [key for key in PRESET_FIELDS if key not in raw]
    if missing:
        raise ValueError(f"preset file {path} missing keys: {', '.join(missing)}")
    name = str(raw.get("name", path.stem))
    return ModelPreset(name, **{key: int(raw[key]) for key in PRESET_FIELDS})


def non_attention_flops_per_token(preset: ModelPreset) -> float:
    """Matmul FLOPs per token per layer outside the pairwise score work.

    QKV plus output projections (8 d^2), a two-matrix MLP (4 d d_ff), and
    the vocabulary projection amortized over layers (2 d n_vocab / n_layer).
    """
    d = preset.d_model
    return 8.0 * d * d + 4.0 * d * preset.d_ff + 2.0 * d * preset.n_vocab / preset.n_layer


def attention_flops_per_token(preset: ModelPreset, n_seq: int) -> float:
    """Pairwise matmul FLOPs per token per layer with nothing masked:
    2*n*d for the scores plus 2*n*d for the value contraction."""
    return 4.0 * n_seq * preset.d_model


def causal_fraction_ring(sp: int) -> float:
    """Fraction of the unmasked pairwise work on the contiguous schedule's
    critical path: the first round is half-masked, every later round is
    pinned by some fully unmasked block."""
    if sp < 2:
        raise ValueError(f"sp must be at least 2, got {sp}")
    return (sp - 0.5) / sp


CAUSAL_FRACTION_STRIPED = 0.5  # every striped round stays close to half-masked


@dataclass(frozen=True)
class TmsQuery:
    preset: ModelPreset
    n_seq: int
    sp: int                   # sequence-parallel degree (ring size)
    flop_weight: float = 2.0  # attention-FLOP cost relative to other FLOPs

    def __post_init__(self):
        if self.sp < 2:
            raise ValueError(f"sp must be at least 2, got {self.sp}")
        if self.n_seq < self.sp or self.n_seq % self.sp != 0:
            raise ValueError(f"sp={self.sp} must divide n_seq={self.n_seq}")
        if self.flop_weight <= 0:
            raise ValueError(f"flop_weight must be positive, got {self.flop_weight}")


def work(i: int, j: int, c: int) -> int:
    """Pairwise interactions one striped device computes for query stripe i
    against key stripe j; the diagonal is included only when i >= j."""
    if c < 1:
        raise ValueError(f"block size must be positive, got {c}")
    return c * (c + 1) // 2 if i >= j else c * (c - 1) // 2


def tms(query: TmsQuery) -> float:
    """Best-case striped-over-ring speedup for a whole training step.

    Returned unrounded (it is strictly increasing in n_seq and sp); round
    to 2 decimals when comparing against published tables. Scale-free: any
    common rescaling of the per-token FLOP terms cancels in the ratio.
    """
    other = non_attention_flops_per_token(query.preset)
    attn = query.flop_weight * attention_flops_per_token(query.preset, query.n_seq)
    return (other + attn * causal_fraction_ring(query.sp)) / (
        other + attn * CAUSAL_FRACTION_STRIPED
    )


@dataclass(frozen=True)
class TmsRow:
    model: str
    mesh: tuple[int, int]  # (model-parallel, sequence-parallel); mp is a label only
    n_seq: int
    tms: float             # rounded to 2 decimals


def tms_table(presets, seq_lens, meshes, flop_weight: float) -> list[TmsRow]:
    """Batch driver over ``tms``: one row per (preset, mesh, n_seq)."""
    rows = []
    for preset in presets:
        for mesh in meshes:
            mp, sp = mesh
            for n_seq in seq_lens:
                value = tms(TmsQuery(preset, n_seq, sp, flop_weight))
                rows.append(TmsRow(preset.name, (mp, sp), n_seq, round(value, 2)))
    return rows


@dataclass(frozen=True)
class GoldenRow:
    hardware: str
    model: str
    mesh: tuple[int, int]
    n_seq: int
    flop_weight: float
    tms: float


@dataclass(frozen=True)
class GoldenDelta:
    row: GoldenRow
    computed: float  # rounded to 2 decimals
    delta: float     # computed - expected, rounded to 2 decimals

    @property
    def within_tolerance(self) -> bool:
        return abs(self.delta) <= SPEEDUP_TOLERANCE + 1e-9


def golden_rows(path=None) -> list[GoldenRow]:
    """Load a reference speedup table (the packaged transcription by default)."""
    if path is None:
        text = resources.files("ringsim").joinpath(_GOLDEN_RESOURCE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = []
    for rec in csv.DictReader(text.splitlines()):
        rows.append(
            GoldenRow(
                hardware=rec["hardware"],
                model=rec["model"],
                mesh=(int(rec["mesh_mp"]), int(rec["mesh_sp"])),
                n_seq=int(rec["n_seq"]),
                flop_weight=float(rec["flop_weight"]),
                tms=float(rec["tms"]),
            )
        )
    if not rows:
        raise ValueError("golden table is empty")
    return rows


def compare_golden(rows=None, presets=None) -> list[GoldenDelta]:
    """Recompute every golden row and report computed-minus-expected deltas."""
    rows = golden_rows() if rows is None else rows
    presets = PRESETS if presets is None else presets
    out = []
    for row in rows:
        if row.model not in presets:
            raise ValueError(f"golden row references unknown model preset {row.model!r}")
        value = tms(TmsQuery(presets[row.model], row.n_seq, row.mesh[1], row.flop_weight))
        computed = round(value, 2)
        out.append(GoldenDelta(row=row, computed=computed, delta=round(computed - row.tms, 2)))
    return out
