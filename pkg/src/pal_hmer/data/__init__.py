from .inkml import ExpressionRecord, Stroke, load_inkml_dir, parse_inkml
from .layout import render_printed
from .pairs import PairedSample, batch_arrays, load_dataset, make_pairs, save_dataset
from .pgm import read_pgm, write_pgm
from .raster import rasterize
from .synth import synth_generate, synth_vocabulary
from .vocab import BOS, EOS, PAD, Vocabulary, build_vocab, detokenize, split_latex, tokenize

__all__ = [
    "BOS", "EOS", "PAD", "ExpressionRecord", "PairedSample", "Stroke", "Vocabulary",
    "batch_arrays", "build_vocab", "detokenize", "load_dataset", "load_inkml_dir", "make_pairs",
    "parse_inkml", "rasterize", "read_pgm", "render_printed", "save_dataset", "split_latex",
    "synth_generate", "synth_vocabulary", "tokenize", "write_pgm",
]
