//! Multi-snapshot adversary: scripted scenarios, snapshot features,
//! distinguishers and randomness tests.

pub mod battery;
pub mod distinguisher;
pub mod experiment;
pub mod features;
pub mod scenario;

pub use battery::{
    compare_populations, device_battery, randomness_battery, BatteryError, BatteryReport, DeviceBattery,
    PopulationComparison, Region,
};
pub use distinguisher::{distinguish, DistinguishError, DistinguisherReport, Split};
pub use experiment::{run_experiment, run_trials, ExperimentConfig, ExperimentError, ExperimentOutput};
pub use features::{extract_features, features_between, FeatureVector, TrialResult, FEATURE_NAMES};
pub use scenario::{
    replay, run_scenario, RecoverKeys, RunError, RunOutput, Scenario, ScenarioOp, SectorData, SessionKind, TraceError, Variant,
};
