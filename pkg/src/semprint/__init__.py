"""semprint: black-box lineage attribution for text-to-image models.

Probe a model with compositional underspecified prompts, classify each
generation into a categorical vocabulary, compare the resulting empirical
measures with exact 2-Wasserstein distance, and aggregate per-prompt trials
into a Beta-Binomial posterior with significance and dominance decisions.
"""

__version__ = "0.1.0"

from .attribution import (
    PosteriorSummary,
    TrialOutcome,
    beta_quantile,
    classify_trial,
    count_successes,
    decide,
    posterior,
)
from .catalog import (
    CategoryVocabulary,
    CompositionalPrompt,
    PromptCatalogue,
    build_default_catalogue,
    load_catalogue,
    render_prompt,
)
from .classify import (
    CategoricalSample,
    ClassifierRequest,
    classify_image,
    entropy,
    filter_unreliable_prompts,
)
from .metrics import (
    DistanceMatrix,
    average_matrices,
    distance_matrix,
    jsd,
    normalize_columns,
    wasserstein2,
)
from .probe import (
    Fingerprint,
    ProbePlan,
    load_fingerprints,
    run_probe,
    save_fingerprints,
)
from .simulate import (
    FineTuneConfig,
    SimModelSpec,
    fine_tune,
    make_lineage,
    sample_fingerprint,
)
