use thiserror::Error;

/// Errors raised by the scheduling engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid menu: {0}")]
    InvalidMenu(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("action drives residual energy negative at layout slot {slot} (z - u = {value:.3e} kWh)")]
    NegativeResidual { slot: usize, value: f64 },

    #[error("action polytope is empty (sum lb = {sum_lb:.6}, sum ub = {sum_ub:.6}, window [{lower:.6}, {upper:.6}])")]
    EmptyPolytope {
        sum_lb: f64,
        sum_ub: f64,
        lower: f64,
        upper: f64,
    },

    #[error("infeasible stage at slot {slot}: {reason}")]
    InfeasibleStage { slot: usize, reason: String },

    #[error("value model produced a non-finite objective ({0})")]
    NonFiniteObjective(f64),

    #[error("normal equations are singular even with ridge {ridge:e}")]
    SingularNormalEquations { ridge: f64 },

    #[error("parameter {name} = {value} outside box [{lo}, {hi}]")]
    ParameterOutOfBox {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("instance too large for the exact oracle: {0}")]
    InstanceTooLarge(String),

    #[error("hindsight program infeasible: {reason} (binding slots: {binding_slots:?})")]
    Infeasible {
        reason: String,
        binding_slots: Vec<usize>,
    },

    #[error("training failed at stage {stage}, state {state}: {source}")]
    Training {
        stage: usize,
        state: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
