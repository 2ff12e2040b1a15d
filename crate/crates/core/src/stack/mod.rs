//! Stack descriptions, scenario files and the configuration space.

mod model;
mod performance;
mod scenario;
mod space;
mod validate;

pub use model::{
    AppClass, EdgeId, EnvironmentProfile, NodeSpec, Publication, StackModel, Subscription, Topic,
};
pub use performance::{AppTarget, Cap, MetricKind, PerformanceSpec};
pub use scenario::{
    load_scenario, parse_scenario, serialize_scenario, ProfilingSection, Scenario, ScenarioError,
    Timeline, TimelineAction, TimelineEvent,
};
pub use space::{
    build_config_space, AdaptorKnob, ConfigSpace, QuotaKnob, UnknownKnob, ADAPTOR_MIN_RATE_HZ,
    ADAPTOR_STEP_HZ, QUOTA_STEP,
};
pub use validate::{validate_spec, validate_stack, Violation, ViolationCode};
