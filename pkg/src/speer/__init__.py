"""Entity-guided hospital-course summarization pipeline.

Submodules:
    corpus    admission records, note concatenation, token counting
    entity    entity spans, extractors, mention embeddings
    esg       synonym graph, entity synonym groups, oracle salience
    select    feature-based salience classifier and PR sweeps
    filter    section segmentation, ROUGE scoring, budget filtering
    guide     guidance lists, {{ }} tagging, model-input assembly
    r3        the Retrieve-Realize-Repeat output format and mock generator
    metrics   source-grounded recall, hallucination rate, adherence
    pipeline  stage orchestration over JSONL/CSV artifacts
    cli       the `speer` command
"""

from .corpus import (
    Admission,
    Note,
    Tokenizer,
    VocabTokenizer,
    WhitespaceTokenizer,
    concatenate_notes,
    count_tokens,
    load_admissions,
    render_note_header,
    save_admissions,
)
from .entity import (
    EmbeddingProvider,
    EntityExtractor,
    EntitySpan,
    HashedNgramProvider,
    LexiconExtractor,
    PrecomputedProvider,
    cosine_similarity,
    embed,
    extract_entities,
    load_gazetteer,
)
from .errors import ConfigError, DataFormatError, InvariantViolation, SpeerError
from .esg import (
    ESG,
    SalienceLabel,
    SynonymGraph,
    build_synonym_graph,
    form_esgs,
    label_salience,
    rank_and_truncate,
)
from .filter import (
    FilterResult,
    HeuristicScorer,
    OracleScorer,
    Section,
    SectionScorer,
    filter_to_budget,
    rouge_f1,
    score_section_oracle,
    segment_sections,
)
from .guide import (
    ChatTemplate,
    GuidanceList,
    TaggedSource,
    build_guidance,
    build_input,
    embed_tags,
    strip_tags,
)
from .metrics import (
    AlignmentResult,
    EvalReport,
    EvalRow,
    adherence,
    aggregate,
    align_to_source,
    hallucination_rate,
    sgp_f1,
    sgr,
)
from .r3 import (
    ParseResult,
    PlanValidationReport,
    R3ParseError,
    SentencePlan,
    SpeerOutput,
    extract_oracle_plans,
    mock_generate,
    parse_r3,
    serialize_r3,
    validate_plans,
)
from .select import (
    AdmissionStats,
    PRPoint,
    SalienceModel,
    featurize,
    predict,
    sweep_thresholds,
    train,
)

__version__ = "0.1.0"
