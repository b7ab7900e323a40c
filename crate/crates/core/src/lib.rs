//! Numerical laboratory for unstable optimal transport maps.
//!
//! Two families of examples are built here. The first is a source density on the
//! unit ball that blows up at `A = e₁` and `A′ = −e₁`, paired with two-atom targets
//! that rotate by an angle θ. The second is a uniform density on an infinite (here
//! truncated) union of thin parallelepiped pairs, paired with atomic targets whose
//! atoms can be nudged one cell at a time.
//!
//! Each map the theory claims to be optimal is available as a closed-form oracle,
//! and can be certified against an independent sample-average semi-discrete solver
//! built on an exact network simplex.

pub mod constructions;
pub mod discrete_ot;
pub mod error;
pub mod geometry;
pub mod mc;
pub mod measures;
pub mod sdot;
pub mod stability;
pub mod transport_maps;

pub use constructions::{BlowupInstance, CellInstance, ConstraintKind, ConstraintReport, TargetFamily, TargetKind};
pub use discrete_ot::{Coupling, DiscreteMeasure, Duals, ExactSolution};
pub use error::{Error, Result};
pub use geometry::{BoxRegion, Cone, Point, Side, Sign};
pub use mc::{Estimate, Method};
pub use measures::{DensityKind, SamplerState, SourceDensity};
pub use sdot::{AgreementReport, LaguerreWeights, SdotSolution};
pub use stability::{Budget, Experiment, Family, HolderFit, StabilityRecord, Witness};
pub use transport_maps::{CellOracle, OracleKey, PerturbedOracle, Provenance, RotatingOracle, TransportMap};
