"""Attention as a conditioning memory: Hebbian association, plasticity rules,
capacity experiments and stacked conditioning circuits."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Activation,
    Norm,
    apply_activation,
    normalize,
    outer_product,
    sample_unit_sphere,
)
from .kernels import (  # noqa: E402
    AssociativeState,
    HeadConfig,
    ProjectionSet,
    conditioning_output,
    hebbian_accumulate,
    linear_attention_batch,
    linear_attention_recurrent,
    project,
    retrieve,
    softmax_attention_reference,
    theorem1_equivalence_check,
)
from .rules import (  # noqa: E402
    BcmThresholdState,
    PlasticityRule,
    decay_closed_form,
    run_rule,
    step_bcm,
    step_decay,
    step_delta,
    step_hebbian,
    step_oja,
)
from .capacity import (  # noqa: E402
    CapacityTrialConfig,
    any_failure_rate,
    capacity_frontier,
    empirical_snr,
    retrieval_failure_rate,
    signal_noise_decompose,
)
from .stacked import (  # noqa: E402
    PropagationConfig,
    build_chain_demo,
    error_propagation_experiment,
    forward_stack,
    run_chain_demo,
    scaling_fit,
)
