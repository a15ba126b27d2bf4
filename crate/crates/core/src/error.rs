use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("field has {found} values but the mesh has {expected} nodes")]
    MeshMismatch { expected: usize, found: usize },

    #[error("non-finite sample {value} at node {node}")]
    NonFinite { node: usize, value: f64 },

    #[error("metric at node {node} is not symmetric positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { node: usize, min_eigenvalue: f64 },

    #[error("negative off-diagonal generator entry {value:e} at node {node}; the metric is too anisotropic for the grid")]
    NegativeStencil { node: usize, value: f64 },

    #[error("test function is negative ({value:e}) at node {node}")]
    NegativeTestFunction { node: usize, value: f64 },

    #[error("exp(2w) overflows at node {node} (w = {w}); rescale the weight")]
    WeightOverflow { node: usize, w: f64 },

    #[error("dimension bound out of range: {0}")]
    DimensionRange(String),

    #[error("singular metric in the stencil of node {node}")]
    SingularMetric { node: usize },

    #[error("no path from node {from} to node {to}")]
    Disconnected { from: usize, to: usize },

    #[error("node index {node} out of range for {len} nodes")]
    NodeOutOfRange { node: usize, len: usize },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("clock reached only {reached:.6} of {target} after {budget} steps")]
    ClockBudget { target: f64, reached: f64, budget: u64 },

    #[error("cutoff constraint violated: {0}")]
    Cutoff(String),

    #[error("cot_K,N undefined: {0}")]
    CotDomain(String),

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{experiment}: {source}")]
    Experiment {
        experiment: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
