"""Adaptive skill-based in-context example selection and evaluation."""

from .backend import (
    BackendConfig,
    GenerationParams,
    HttpChatBackend,
    HttpRewardBackend,
    MockChatBackend,
    MockRewardBackend,
    MockRule,
    MockRewardRule,
    MockScript,
    mock_backends,
)
from .corpus import (
    ExampleBank,
    ExampleRecord,
    Question,
    SkillBank,
    annotate_corpus,
    annotate_skills,
    build_example_bank,
    load_corpus,
    load_skill_bank,
    normalize_skill_name,
    parse_tagged_field,
)
from .errors import (
    AdaptMIError,
    AnnotationError,
    FeedbackError,
    JudgmentError,
    ParseError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from .harness import (
    EvalRecord,
    Pipeline,
    RunConfig,
    RunReport,
    aggregate_report,
    best_of_n_level,
    best_of_n_outcomes,
    consistency_at_5,
    extract_boxed_answer,
    grade,
    level_from_outcomes,
    normalize_answer,
    run_iterative,
    run_pipeline,
)
from .reward import (
    ClassificationReport,
    DifficultyLabel,
    StepScores,
    Thresholds,
    classification_metrics,
    consistency_heuristic,
    length_heuristic,
    orm_filter,
    partition,
    segment_steps,
    threshold_filter,
)
from .select import (
    FewShotSet,
    PromptSpec,
    SelectionStrategy,
    adaptmi_plus_select,
    adaptmi_select,
    assemble_feedback_prompt,
    build_feedback_prompt,
    build_prompt,
    fixed_examples,
    identify_missing_skills,
    random_examples,
    skill_based_examples,
)

__version__ = "0.1.0"
