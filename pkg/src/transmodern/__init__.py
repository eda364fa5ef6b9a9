"""
Exposes the transtokenization toolkit: tokenizer, alignment, embedding transfer, encoder, training and evaluation.
"""

# SPDX-FileCopyrightText: 2023-present Robin van der Noord <robinvandernoord@gmail.com>
#
# SPDX-License-Identifier: MIT
from .accounting import AllocationMeter, linearity_factor  # noqa: F401 imported for library reasons
from .alignment import (  # noqa: F401 imported for library reasons
    AlignmentTable,
    ParallelCorpus,
    TranslationTable,
    extract_counts,
    train_ibm1,
)
from .config import TypedConfig, load_into  # noqa: F401 imported for library reasons
from .encoder import (  # noqa: F401 imported for library reasons
    EncoderConfig,
    EncoderModel,
    build_model,
    encode_hidden,
    forward,
    load_model,
    mlm_loss,
    save_model,
)
from .evaluation import (  # noqa: F401 imported for library reasons
    EvalReport,
    HeadConfig,
    classify_eval,
    encode_sentence,
    eval_mlm,
    ner_eval,
    retrieval_eval,
)
from .pipeline import PipelineConfig, cmd_ablation, cmd_longcontext  # noqa: F401 imported for library reasons
from .synthetic import ToyConfig, make_toy  # noqa: F401 imported for library reasons
from .tokenizer import (  # noqa: F401 imported for library reasons
    TokenizerModel,
    decode,
    encode,
    fertility,
    train_bpe,
)
from .training import (  # noqa: F401 imported for library reasons
    Checkpoint,
    TokenizedCorpus,
    TrainConfig,
    mask_batch,
    run_two_stage,
    train_stage,
)
from .transtokenizer import (  # noqa: F401 imported for library reasons
    EmbeddingMatrix,
    FallbackMap,
    Provenance,
    coverage_report,
    init_embeddings,
)
