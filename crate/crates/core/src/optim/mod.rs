//! First- and quasi-second-order optimizers over flat parameter vectors.

mod adam;
mod lbfgs;
mod line_search;

pub use adam::{AdamConfig, AdamState};
pub use lbfgs::{Evaluation, LbfgsConfig, LbfgsState, LbfgsStatus, LbfgsStep};
pub use line_search::{strong_wolfe, LineSearchConfig, LineSearchOutcome, LineSearchStatus};
