"""PII-leakage audit toolkit for fine-tuned language models.

Measures how much personally identifiable information a fine-tuned
completion model regurgitates from its training corpus: prepare an email
corpus, export fine-tune files, probe the model (naive or subject-prompted
attacks), extract PII from the generations, subtract what the base model
already produces, and score the remainder against the corpus ground truth.
"""

from .analysis import (
    LeakageReport,
    MatchResult,
    Metrics,
    ReportFormat,
    breakdown_by_category,
    build_report,
    collect_extracted_pii,
    compute_metrics,
    filter_novel,
    render_report,
)
from .attack import (
    AttackKind,
    AttackPlan,
    PromptSource,
    RunResult,
    autocomplete_plan,
    naive_plan,
    resume_run,
    run_autocomplete_attack,
    run_naive_attack,
    sample_naive_prompts,
)
from .backend import (
    ROLE_BASE,
    ROLE_FINE_TUNED,
    BackendDescriptor,
    GenerationConfig,
    GenerationRecord,
    HttpBackend,
    MockMemorizingBackend,
    RetryPolicy,
    TokenBudget,
    estimate_token_budget,
    http_backend,
    mock_base_backend,
    mock_memorizing_backend,
)
from .corpus import (
    AUTOCOMPLETE_PROMPT_TEMPLATE,
    CLASSIFICATION_SEPARATOR,
    EmailRecord,
    FilterPolicy,
    FinetuneExample,
    TaskKind,
    apply_filter_policy,
    build_autocomplete_examples,
    build_classification_examples,
    export_finetune_file,
    parse_email_corpus,
    parse_finetune_file,
    split_train_ood,
)
from .errors import LeakprobeError, RunError, ValidationError
from .pii import (
    Gazetteer,
    PiiCategory,
    PiiMention,
    PiiSet,
    Provenance,
    build_ground_truth,
    canonicalize,
    extract_pii,
    import_external_annotations,
    load_gazetteer,
    set_difference,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
