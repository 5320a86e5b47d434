from lvnet.data.dataset import (
    Clip,
    Manifest,
    SequenceEntry,
    clip_batches,
    dataset_clips,
    read_dataset,
    read_manifest,
    read_mask,
    write_dataset,
)
from lvnet.data.pgm import read_pgm, write_pgm
from lvnet.data.synth import GenerationError, SequenceSample, SynthSpec, synth_dataset, synth_sequence

__all__ = [
    "Clip",
    "GenerationError",
    "Manifest",
    "SequenceEntry",
    "SequenceSample",
    "SynthSpec",
    "clip_batches",
    "dataset_clips",
    "read_dataset",
    "read_manifest",
    "read_mask",
    "read_pgm",
    "synth_dataset",
    "synth_sequence",
    "write_dataset",
    "write_pgm",
]
