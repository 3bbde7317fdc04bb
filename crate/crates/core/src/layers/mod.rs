//! Composite layers shared by the multi-task network and the codec.

mod bottleneck;
mod conv;
mod gdn;

pub use bottleneck::{Bottleneck, BottleneckConfig};
pub use conv::Conv2d;
pub use gdn::{clamp_all_gdn, Gdn, GdnParams, BETA_MIN};
