"""Dynamic watermarking of linear stochastic control loops.

Actuators superimpose a private excitation on the nominal input; windowed
statistical tests on the reported measurements then decide whether the
sensor stream is consistent with the physics plus that excitation, and
bound the distortion any consistent attacker can still add.

Layers: ``linsys`` (plants and policies), ``watermark`` (excitation and
shapers), ``adversary`` (sensor attack strategies), ``residual``
(watermark-aware residual generators), ``detect`` (window statistics,
calibration, thresholds), ``scenario``/``harness`` (config files, closed
loops, trace export), ``cli`` (command-line front end).
"""

from .adversary import (
    AttackStrategy,
    AdditiveEstimatedAttack,
    BUILTIN_ATTACKS,
    CustomAttack,
    HonestSensor,
    NoiseSimAttack,
    ReplayAttack,
    SensorView,
    register_attack,
)
from .detect import (
    STAT_KINDS,
    ResidualNull,
    Threshold,
    WindowStat,
    calibrate_threshold,
    cov_entries_stat,
    cov_stat,
    cross_corr_stat,
    nll_window,
    sequential_detect,
    simulate_null_stats,
    threshold_from_stats,
    variance_stat,
)
from .harness import (
    RunReport,
    Trace,
    WindowRecord,
    calibrate_detector,
    channel_specs,
    export_trace,
    import_trace,
    oracle_metrics,
    run_scenario,
    stat_series,
    trace_equal,
)
from .linsys import (
    ArmaxPlant,
    ArxPlant,
    ArxDeadbeat,
    CallablePolicy,
    ControlPolicy,
    LinearFeedback,
    MimoPlant,
    PartialPlant,
    ScalarPlant,
    ZeroPolicy,
    check_min_phase,
)
from .residual import (
    ArmaxFilterState,
    KalmanDesign,
    KalmanState,
    ResidualPair,
    armax_filter_step,
    arx_residual,
    kalman_design,
    kalman_step,
    mimo_residual,
    scalar_residual,
)
from .scenario import (
    SCHEMA_VERSION,
    AttackConfig,
    DetectorConfig,
    PlantConfig,
    PolicyConfig,
    ScenarioConfig,
    ScenarioError,
    load_scenario,
    save_scenario,
    scenario_from_dict,
)
from .watermark import (
    FAMILIES,
    WatermarkSpec,
    armax_shape,
    draw_excitation,
    draw_iid,
    make_shaper_state,
    match_distribution,
    pre_equalize,
)

__version__ = "0.1.0"
