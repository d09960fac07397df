//! Synthetic world: scene generation and the collision oracle.

mod config;
mod corpus;
mod generate;
pub mod geometry;
pub mod motion;
mod sim;

pub use config::{Archetype, ArchetypeMix, WorldConfig};
pub use corpus::*;
pub use generate::{
    generate, generate_scenario, GeneratedScene, HazardKind, EGO_LENGTH, EGO_WIDTH, LANE_WIDTH, POINT_SPACING,
    VISIBILITY_RADIUS,
};
pub use geometry::{obb_gap, obb_overlap, OrientedBox};
pub use sim::{ego_box, simulate, simulate_trace, track_box, EgoPolicyParams, EgoState, SimError, SimOutcome};
