"""Knowledge-guided reasoning chains over a pluggable retrieval engine.

The package covers the full loop around an externally trained model:
constructing reasoning-chain training data, filtering it, emitting
loss-masked SFT conversations, running the deployed reasoning loop, and
scoring the results.
"""
from .backends import (
    BackendRefusal,
    CompletionTimeout,
    HttpBackend,
    ScriptedBackend,
    ScriptEntry,
    TransportError,
    backend_from_env,
    complete,
    scripted_backend_from_file,
)
from .chain import (
    Action,
    ChainStatus,
    DEFAULT_T_MAX,
    Finish,
    MissingParameter,
    NoActionFound,
    ParseError,
    ReasoningChain,
    ReasoningStep,
    Search,
    UnknownActionType,
    action_from_dict,
    action_to_dict,
    action_to_json,
    chain_from_dict,
    chain_to_dict,
    parse_step,
    parse_transcript,
    render_history,
)
from .errors import ConfigError, RagchainError
from .evaluation import (
    ChainLengthStats,
    EvalRecord,
    SchemaMismatch,
    UnparseableVerdict,
    build_report,
    chain_length_stats,
    evaluate_records,
    judge_accl,
    load_benchmark,
)
from .inference import InferenceRecord, finalize_answer, run_inference
from .metrics import exact_match, f1_score, normalize_answer
from .pipeline import (
    DecompositionStep,
    FilterReport,
    MissingDecomposition,
    QAExample,
    RejectsUnfinished,
    SftSample,
    SftSegment,
    construct_chain,
    construct_chain_ablation,
    emit_sft,
    filter_chains,
)
from .prompts import PromptSet, render_template
from .rag import (
    CorpusView,
    Document,
    EmptyCorpus,
    LexicalScorer,
    PoolExhausted,
    RagEngine,
    RetrievalResult,
    build_corpus,
    default_token_counter,
    generate_observation,
    load_corpus,
    retrieve,
    save_corpus,
)

__version__ = "0.1.0"
