use thiserror::Error;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("leaf node {node} ({name}) has no binding")]
    UnboundLeaf { node: usize, name: String },

    #[error("binding for node {node} has shape {got:?}, expected {expected:?}")]
    BindingShape {
        node: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },

    #[error("backward requires a scalar output, node {node} has {numel} elements")]
    NonScalarOutput { node: usize, numel: usize },

    #[error("backward called before forward evaluated node {node}")]
    NotEvaluated { node: usize },

    #[error("operation {op} has no symbolic adjoint")]
    NoSymbolicAdjoint { op: String },

    #[error("parameter {name} has shape {got:?} in the store, graph expects {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite gradient for parameter {name} at element {index}; step aborted")]
    NonFiniteGradient { name: String, index: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
