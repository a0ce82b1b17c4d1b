//! PHT-splines on hierarchical T-meshes and their rational extension.

pub mod mesh;
pub mod rht;
pub mod space;

pub use mesh::{coord_level, Cell, HierTMesh, RefinementReport, VertexKind, VertexRecord, TICKS, TICK_BITS};
pub use rht::{rht_eval, rht_update_controls};
pub use space::{prolong_hierarchical, BasisVertex, PhtSpace, TraceKey};
