//! Dense networks with exact input derivatives, a reverse-mode tape, and Adam.

mod adam;
mod graph;
mod network;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Var};
pub use network::{Activation, BoundNetwork, DenseLayer, DenseNetwork, NetworkSpec};

pub(crate) use network::TextReader;
