from prometheus_client import CollectorRegistry, Counter, Histogram, generate_latest

# Private registry, separate from the prometheus default
registry = CollectorRegistry()

OPERATOR_APPLY_COUNT = Counter(
    "tetmg_operator_applications_total",
    "Matrix-free operator applications",
    ["kernel", "form"],
    registry=registry,
)
SMOOTHER_SWEEP_COUNT = Counter(
    "tetmg_smoother_sweeps_total",
    "Smoother sweeps",
    ["kind"],
    registry=registry,
)
VCYCLE_COUNT = Counter(
    "tetmg_vcycles_total",
    "V-cycles started on any level above the coarse level",
    registry=registry,
)
CG_ITERATION_COUNT = Counter(
    "tetmg_cg_iterations_total",
    "Conjugate gradient iterations",
    registry=registry,
)
SOLVE_DURATION = Histogram(
    "tetmg_solve_duration_seconds",
    "Wall time of complete solver runs",
    ["solver"],
    registry=registry,
)


def exposition() -> str:
    """Prometheus text exposition of all counters"""
    return generate_latest(registry).decode("utf-8")
