//! Loading the tables either from CSV files or from a data directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use diffusion_core::ingest::{
    impute_covariates, parse_adoption_data, parse_covariate_panel, AdoptionTable, CovariatePanel, ImputationRules,
    DEFAULT_FACTORS,
};
use diffusion_core::store::DataSnapshot;

use crate::CliError;

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Adoption events CSV (state, policy, adopt_year).
    #[arg(long, requires = "meta")]
    pub events: Option<PathBuf>,
    /// Policy metadata CSV (policy, policy_name, topic).
    #[arg(long, requires = "events")]
    pub meta: Option<PathBuf>,
    /// Covariate panel CSV (state, year, factor columns).
    #[arg(long, requires = "events")]
    pub covariates: Option<PathBuf>,
    /// Comma-separated factor columns to read from the panel.
    #[arg(long, value_delimiter = ',')]
    pub factors: Option<Vec<String>>,
    /// Data directory with ingested tables, used when no CSVs are given.
    #[arg(long, env = "DATA_DIR", default_value = "./data")]
    pub data_dir: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))
}

impl DataArgs {
    pub fn factor_names(&self) -> Vec<String> {
        self.factors.clone().unwrap_or_else(|| DEFAULT_FACTORS.iter().map(|s| s.to_string()).collect())
    }

    /// Tables from the CSVs when given, otherwise from the data directory.
    pub fn load(&self) -> Result<DataSnapshot, CliError> {
        match (&self.events, &self.meta) {
            (Some(events), Some(meta)) => {
                let table =
                    parse_adoption_data(&read(events)?, &read(meta)?).map_err(|e| CliError::User(e.to_string()))?;
                let panel = match &self.covariates {
                    Some(path) => Some(load_panel(&read(path)?, &self.factor_names())?),
                    None => None,
                };
                Ok(DataSnapshot { table, panel })
            }
            _ => {
                if !self.data_dir.join("manifest.json").exists() {
                    return Err(CliError::User(format!(
                        "no ingested data in {} (set DATA_DIR or pass --events/--meta)",
                        self.data_dir.display()
                    )));
                }
                DataSnapshot::load(&self.data_dir).map_err(|e| CliError::User(e.to_string()))
            }
        }
    }
}

/// Parses and imputes the panel over its full year span.
pub fn load_panel(bytes: &[u8], factors: &[String]) -> Result<CovariatePanel, CliError> {
    let raw = parse_covariate_panel(bytes, factors).map_err(|e| CliError::User(e.to_string()))?;
    impute_covariates(&raw, raw.years, &ImputationRules::default()).map_err(|e| CliError::User(e.to_string()))
}

pub fn summary(table: &AdoptionTable) -> String {
    let r = &table.report;
    format!(
        "{} policies, {} adoption records ({} duplicate rows collapsed, {} policies / {} records in excluded topics dropped, {} policies without records)",
        table.policies.len(),
        table.records.len(),
        r.duplicate_rows_collapsed,
        r.excluded_topic_policies,
        r.excluded_topic_records,
        r.policies_without_records
    )
}
