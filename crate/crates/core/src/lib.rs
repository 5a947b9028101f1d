//! Policy diffusion analytics.
//!
//! The pipeline runs from raw adoption events to per-policy cascades, an
//! inferred state-to-state diffusion network, per-state centralities and
//! innovativeness scores, and Cox proportional-hazards fits of adoption
//! timing against contextual covariates.
//!
//! ```text
//! ingest -> cascade -> netinf -> metrics
//!        \-> survival (with the imputed covariate panel)
//! ```

pub mod cascade;
pub mod ingest;
pub mod metrics;
pub mod netinf;
pub mod store;
pub mod survival;

pub use cascade::{
    adoption_stats, build_cascades, AdoptionStats, Cascade, CascadeEvent, CascadeSet, StatsFocus, Tally,
};
pub use ingest::{
    filter_adoptions, impute_covariates, parse_adoption_data, parse_covariate_panel, AdoptionRecord, AdoptionTable,
    CovariatePanel, ImputationRules, IngestError, PolicyMeta, StateCode, Topic, YearRange,
};
pub use metrics::{Digraph, Measurement, StateMetricVector};
pub use netinf::{infer_network, DiffusionEdge, DiffusionNetwork, InferenceParams, NetinfError, TransmissionModel};
pub use survival::{build_person_periods, fit_cox, hazard_report, CoxFit, CoxOptions, SurvivalError};
