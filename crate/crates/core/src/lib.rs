//! Domain model, assessment battery registry, payload formats and metric
//! derivations for the learning health system backbone.

pub mod clock;
pub mod metrics;
pub mod model;
pub mod payload;
pub mod registry;
pub mod submission;
pub mod week;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use model::*;
pub use registry::{battery_registry, registry, AssessmentCode, AssessmentDefinition, MetricDefinition, Modality};
pub use week::IsoWeekId;
