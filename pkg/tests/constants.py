from pathlib import Path

PYTEST_EXAMPLES = Path("./pytest_examples")
PIPELINE_FILE = PYTEST_EXAMPLES / "pipeline.toml"
ENCODER_FILE = PYTEST_EXAMPLES / "encoder.json"
WRONG_TYPE_FILE = PYTEST_EXAMPLES / "wrong_type.toml"
EMPTY_FILE = PYTEST_EXAMPLES / "empty.toml"
PARALLEL_FILE = PYTEST_EXAMPLES / "parallel.tsv"
ALIGNMENT_FILE = PYTEST_EXAMPLES / "alignment.tsv"
RETRIEVAL_DIR = PYTEST_EXAMPLES / "retrieval"
CLASSIFY_DIR = PYTEST_EXAMPLES / "classify"
NER_DIR = PYTEST_EXAMPLES / "ner"

# small enough for the CPU test suite
TINY_ENCODER = dict(
    hidden=16,
    layers=3,
    heads=2,
    intermediate=24,
    vocab_size=40,
    max_context=128,
    global_every=3,
    local_window=4,
)

ENGLISH_LINES = [
    "the red apple is sweet",
    "the blue sky is wide",
    "a red sky at night",
    "the apple tree is tall",
    "green grass and blue water",
    "the night is dark and wide",
]
