//! Differentiable tensor operations recorded on a [`Graph`](crate::graph::Graph).
//!
//! Most ops also expose a graph-free `*_apply` form used as a reference by
//! tests and by callers that only need values.

mod basic;
pub mod conv;
pub mod norm;
pub mod pool;
pub mod regress;
pub mod resize;
pub mod testing;
pub mod volume;

pub use basic::*;
pub use conv::{conv, conv_apply, ConvSpec};
pub use norm::{batch_norm_eval, batch_norm_train, BatchStats};
pub use pool::{avg_pool2d, global_avg_pool, max_pool2d};
pub use regress::{disparity_probabilities, regress, regress_apply, soft_argmax};
pub use resize::{resize_linear, resize_linear_apply};
pub use volume::{concat_volume, concat_volume_apply, gwc_volume, gwc_volume_apply};
