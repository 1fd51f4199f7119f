//! Partition sums, pressure, specification, expansivity and equilibrium-state
//! construction for flows on locally maximal invariant sets.
//!
//! The [`flow`] module provides two backends: an exact suspension flow over a
//! subshift of finite type and an RK4-integrated ODE (Lorenz by default).
//! Everything else is generic over [`Flow`].

pub mod config;
pub mod decomposition;
pub mod equilibrium;
pub mod error;
pub mod flow;
pub mod io;
pub mod partition;
pub mod regularity;
pub mod segments;
pub mod specification;

pub use config::{BackendSpec, OdeSystem};
pub use decomposition::{Decomposition, Split, Splitter};
pub use equilibrium::{EmpiricalMeasure, GibbsReport, Scales};
pub use error::{Error, Result};
pub use flow::{
    Flow, Neighborhood, OdeFlow, OdePoint, Potential, RegionLabel, Sft, SymPoint,
    SymbolicSuspension,
};
pub use partition::{PartitionOptions, PressureEstimate, SeparatedSet};
pub use segments::{OrbitSegment, Provenance, SegmentCollection};
pub use specification::{Glue, ShadowingCertificate};
