from .formats import (
    DenseVideoRecord,
    SchemaError,
    dump_submission,
    ingest_clip_corpus,
    load_dense_dataset,
    load_references,
    read_features,
    read_submission,
    references_from_records,
    write_annotations,
    write_features,
    write_submission,
)
from .synthetic import SyntheticSpec, generate_synthetic_corpus, split_records, write_dataset
from .tokenizer import Vocab, detokenize, tokenize

__all__ = [
    "DenseVideoRecord",
    "SchemaError",
    "SyntheticSpec",
    "Vocab",
    "detokenize",
    "dump_submission",
    "generate_synthetic_corpus",
    "ingest_clip_corpus",
    "load_dense_dataset",
    "load_references",
    "read_features",
    "read_submission",
    "references_from_records",
    "split_records",
    "tokenize",
    "write_annotations",
    "write_dataset",
    "write_features",
    "write_submission",
]
