"""Traveling purchaser toolkit.

Generate instances, solve them with construction heuristics, exact
subset enumeration, or a learned attention policy, and reproduce the
whole train/evaluate loop from the command line (``tppsolve --help``).
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Offer,
    PurchasePlan,
    Route,
    Solution,
    TppInstance,
    Variant,
    check_solution,
    distance_matrix,
    route_travel_cost,
    truncated_distance,
    validate_instance,
)
# the generator and evaluation entry points stay namespaced in their
# submodules (tppsolve.generate.generate, tppsolve.evaluate.evaluate):
# re-exporting those two callables here would shadow the submodules for
# anyone writing `import tppsolve.generate as ...`
from .generate import (  # noqa: F401
    GeneratorSpec,
    demand_from_supplies,
    generate_indexed,
    generate_many,
    import_tpplib,
    load_any,
    read_instance,
    write_instance,
)
from .planner import optimal_purchase, plan_cost  # noqa: F401
from .env import action_mask, reset, step, terminal_reward  # noqa: F401
from .heuristics import (  # noqa: F401
    HEURISTICS,
    cah,
    cah_trh,
    gsh,
    gsh_trh,
    post_optimize,
    trh,
    tsp_resequence,
)
from .oracle import brute_force_solve, export_milp, held_karp  # noqa: F401
from .policy import (  # noqa: F401
    PolicyConfig,
    decode_step,
    encode,
    init_policy_params,
    model_card,
    rollout,
    rollout_batch,
)
from .training import (  # noqa: F401
    MetaConfig,
    TrainConfig,
    baseline_refresh_test,
    derived_seed,
    fine_tune,
    load_policy,
    meta_train,
    reinforce_update,
    save_policy,
    train,
)
from .evaluate import (  # noqa: F401
    STRATEGIES,
    augment_instance,
    augmentation_inverse,
    make_strategy,
    parse_opt_file,
    report_csv,
    report_text,
    solve_with_augmentation,
    symmetrized,
)
from .solvers import (  # noqa: F401
    CommodityAddingSolver,
    ExactSolver,
    GreedySavingsSolver,
    PolicySolver,
)
