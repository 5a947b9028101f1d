//! `diffusion`: ingest adoption data, infer diffusion networks, fit hazard
//! models, compute state measurements, and serve the JSON API.
//!
//! Exit codes: 0 on success, 1 on user error (bad flags, unreadable or
//! invalid input), 2 on computational failure.

mod data;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use diffusion_core::cascade::build_cascades;
use diffusion_core::ingest::{filter_adoptions, AdoptionTable, Topic, YearRange};
use diffusion_core::metrics::{
    closeness_centrality, contextual_measurement, degree_centrality, pagerank, quartile_bins, static_innovativeness,
    Basis, ClosenessDirection, DegreeKind, Measurement, StateMetricVector,
};
use diffusion_core::netinf::{infer_network, DiffusionNetwork, InferenceParams, TransmissionModel};
use diffusion_core::store::DataSnapshot;
use diffusion_core::survival::{build_person_periods, fit_cox, CoxOptions, SurvivalError, TieMethod};
use diffusion_server::config::parse_topic_choice;
use diffusion_server::Service;
use serde_json::{json, Value};

use data::DataArgs;

pub enum CliError {
    User(String),
    Compute(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Compute(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "diffusion", version, about = "Policy diffusion analytics", propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the generation timestamp so identical runs give identical files.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    deterministic: bool,
}

#[derive(Args, Debug, Clone)]
struct ScopeArgs {
    /// ALL or one topic label or code.
    #[arg(long, default_value = "ALL")]
    topic: String,
    #[arg(long, default_value_t = 1950)]
    from: i32,
    #[arg(long, default_value_t = 2017)]
    to: i32,
}

impl ScopeArgs {
    fn resolve(&self) -> Result<(Option<Topic>, YearRange)> {
        let topic = parse_topic_choice(&self.topic).map_err(|e| CliError::User(e.detail))?;
        let range = YearRange::new(self.from, self.to);
        if range.is_empty() {
            return Err(CliError::User(format!("empty year range {range}")));
        }
        Ok((topic, range))
    }
}

#[derive(Args, Debug, Clone)]
struct InferenceArgs {
    /// Vuong-test p-value at which edge insertion stops.
    #[arg(long, default_value_t = 0.05)]
    cutoff: f64,
    #[arg(long, default_value = "exponential")]
    model: String,
    /// Rate of the transmission-delay distribution.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    max_edges: Option<usize>,
}

impl InferenceArgs {
    fn params(&self) -> Result<InferenceParams> {
        let model: TransmissionModel = self.model.parse().map_err(|e| CliError::User(format!("{e}")))?;
        let params = InferenceParams {
            transmission_model: model,
            lambda: self.lambda,
            p_cutoff: self.cutoff,
            max_edges: self.max_edges,
            ..InferenceParams::default()
        };
        params.validate().map_err(|e| CliError::User(e.to_string()))?;
        Ok(params)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the CSV inputs and store the normalized tables in the data directory.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Infer the diffusion network for a topic and year range.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scope: ScopeArgs,
        #[command(flatten)]
        inference: InferenceArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Fit Cox models of adoption hazard; one JSON object per line.
    Cox {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        policy: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long, value_enum, default_value_t = Ties::Efron)]
        ties: Ties,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compute one state measurement.
    Metrics {
        #[command(flatten)]
        data: DataArgs,
        /// Degree, in-degree, out-degree, closeness, pagerank, innovativeness, or a factor name.
        #[arg(long)]
        measurement: String,
        #[command(flatten)]
        scope: ScopeArgs,
        #[command(flatten)]
        inference: InferenceArgs,
        #[arg(long, value_enum, default_value_t = Direction::In)]
        closeness_direction: Direction,
        /// Averaging basis for factor measurements.
        #[arg(long, value_enum, default_value_t = BasisKind::YearsRange)]
        basis: BasisKind,
        #[arg(long)]
        basis_year: Option<i32>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Warm the analysis cache in DATA_DIR/cache.
    Precompute {
        #[arg(long, env = "DATA_DIR", default_value = "./data")]
        data_dir: PathBuf,
        /// Every topic network, every measurement snapshot and every Cox fit.
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Serve the JSON API (and optionally a static UI bundle).
    Serve {
        #[arg(long, env = "DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, env = "PORT", default_value_t = diffusion_server::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        bind: IpAddr,
        #[arg(long, env = "STATIC_DIR")]
        static_dir: Option<PathBuf>,
    },
    /// Write a self-contained bundle of networks, measurements and stats.
    Export {
        #[arg(long, env = "DATA_DIR", default_value = "./data")]
        data_dir: PathBuf,
        #[command(flatten)]
        scope: ScopeArgs,
        #[arg(long, default_value_t = 0.05)]
        cutoff: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Cascade utilities.
    Cascades {
        #[command(subcommand)]
        action: CascadesCommand,
    },
}

#[derive(Subcommand, Debug)]
enum CascadesCommand {
    /// Emit one cascade per line for external tools.
    Export {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scope: ScopeArgs,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Ties {
    Efron,
    Breslow,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Direction {
    In,
    Out,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BasisKind {
    AllRange,
    YearsRange,
    OneYear,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Jsonl,
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn write_output(out: &OutputArgs, content: &str) -> Result<()> {
    match &out.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .map_err(|e| CliError::User(format!("cannot create {}: {e}", parent.display())))?;
            }
            fs::write(path, content).map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))?;
            progress(format!("wrote {}", path.display()));
            Ok(())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes()).map_err(|e| CliError::User(format!("cannot write output: {e}")))
        }
    }
}

/// Pretty JSON, with a generation timestamp unless deterministic.
fn json_document(mut value: Value, out: &OutputArgs) -> String {
    if !out.deterministic {
        if let Value::Object(map) = &mut value {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            map.insert("generated_at".into(), json!(now));
        }
    }
    let mut s = serde_json::to_string_pretty(&value).expect("JSON value serializes");
    s.push('\n');
    s
}

fn scoped_network(table: &AdoptionTable, scope: &ScopeArgs, params: &InferenceParams) -> Result<DiffusionNetwork> {
    let (topic, range) = scope.resolve()?;
    let filtered = filter_adoptions(table, topic, range).map_err(|e| CliError::User(e.to_string()))?;
    let set = build_cascades(&filtered);
    progress(format!("inferring over {} cascades with {} adoptions", set.cascades.len(), set.total_events()));
    let network = infer_network(&set, params).map_err(|e| CliError::Compute(e.to_string()))?;
    progress(format!("inferred {} edges", network.edges.len()));
    Ok(network)
}

fn ingest(data: &DataArgs, output: &OutputArgs) -> Result<()> {
    if data.events.is_none() {
        return Err(CliError::User("ingest needs --events and --meta".into()));
    }
    let snapshot = data.load()?;
    progress(data::summary(&snapshot.table));
    if let Some(panel) = &snapshot.panel {
        progress(format!("covariate panel {} with {} factors", panel.years, panel.factors.len()));
    }
    let manifest = snapshot.save(&data.data_dir).map_err(|e| CliError::User(e.to_string()))?;
    progress(format!("stored data version {} in {}", manifest.data_version, data.data_dir.display()));
    if output.out.is_some() {
        write_output(output, &json_document(serde_json::to_value(&manifest).expect("manifest serializes"), output))?;
    }
    Ok(())
}

fn infer(data: &DataArgs, scope: &ScopeArgs, inference: &InferenceArgs, output: &OutputArgs) -> Result<()> {
    let params = inference.params()?;
    let snapshot = data.load()?;
    let network = scoped_network(&snapshot.table, scope, &params)?;
    write_output(output, &json_document(serde_json::to_value(&network).expect("network serializes"), output))
}

fn survival_code(e: &SurvivalError) -> &'static str {
    match e {
        SurvivalError::UnknownPolicy(_) => "UnknownPolicy",
        SurvivalError::PanelCoverageGap { .. } => "PanelCoverageGap",
        SurvivalError::NoEvents => "NoEvents",
        SurvivalError::NoUsableCovariates => "NoUsableCovariates",
        SurvivalError::RaggedRow { .. } => "RaggedRow",
    }
}

fn cox(data: &DataArgs, policy: Option<&str>, ties: Ties, output: &OutputArgs) -> Result<()> {
    let snapshot = data.load()?;
    let panel = snapshot.panel.as_ref().ok_or_else(|| {
        CliError::User("cox needs covariates (--covariates, or an ingested panel in DATA_DIR)".into())
    })?;
    let ids: Vec<String> = match policy {
        Some(id) if !snapshot.table.policies.contains_key(id) => {
            return Err(CliError::User(format!("unknown policy {id:?}")))
        }
        Some(id) => vec![id.to_string()],
        None => snapshot.table.policies.keys().cloned().collect(),
    };
    let options = CoxOptions {
        ties: match ties {
            Ties::Efron => TieMethod::Efron,
            Ties::Breslow => TieMethod::Breslow,
        },
        ..CoxOptions::default()
    };
    let mut lines = String::new();
    let mut failures = Vec::new();
    for id in &ids {
        let value = match build_person_periods(id, &snapshot.table, panel).and_then(|pp| fit_cox(&pp, &options)) {
            Ok(fit) => serde_json::to_value(&fit).expect("fit serializes"),
            Err(e) => {
                failures.push(format!("{id}: {e}"));
                json!({ "policy_id": id, "error": survival_code(&e), "detail": e.to_string() })
            }
        };
        lines.push_str(&value.to_string());
        lines.push('\n');
    }
    progress(format!("fitted {} of {} policies", ids.len() - failures.len(), ids.len()));
    write_output(output, &lines)?;
    match (policy, failures.first()) {
        (Some(_), Some(f)) => Err(CliError::Compute(format!("fit failed: {f}"))),
        _ => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn metrics(
    data: &DataArgs,
    measurement: &str,
    scope: &ScopeArgs,
    inference: &InferenceArgs,
    direction: Direction,
    basis: BasisKind,
    basis_year: Option<i32>,
    output: &OutputArgs,
) -> Result<()> {
    let snapshot = data.load()?;
    let (topic, range) = scope.resolve()?;
    let vector: StateMetricVector = match measurement.parse::<Measurement>() {
        Ok(Measurement::StaticInnovativeness) => {
            static_innovativeness(&snapshot.table, range, topic).map_err(|e| CliError::User(e.to_string()))?
        }
        Ok(m) => {
            let g = scoped_network(&snapshot.table, scope, &inference.params()?)?.graph();
            match m {
                Measurement::Degree => degree_centrality(&g, DegreeKind::Total),
                Measurement::InDegree => degree_centrality(&g, DegreeKind::In),
                Measurement::OutDegree => degree_centrality(&g, DegreeKind::Out),
                Measurement::Closeness => closeness_centrality(
                    &g,
                    match direction {
                        Direction::In => ClosenessDirection::In,
                        Direction::Out => ClosenessDirection::Out,
                    },
                ),
                _ => pagerank(&g, 0.85, 1e-10).map_err(|e| CliError::Compute(e.to_string()))?,
            }
        }
        Err(_) => {
            let panel = snapshot.panel.as_ref().ok_or_else(|| {
                CliError::User(format!("unknown measurement {measurement:?} (no covariate panel for factors)"))
            })?;
            let factor = panel
                .factors
                .iter()
                .find(|f| f.eq_ignore_ascii_case(measurement))
                .ok_or_else(|| CliError::User(format!("unknown measurement or factor {measurement:?}")))?;
            let basis = match basis {
                BasisKind::AllRange => Basis::AllRange,
                BasisKind::YearsRange => Basis::YearsRange { start: range.start, end: range.end },
                BasisKind::OneYear => Basis::OneYear {
                    year: basis_year.ok_or_else(|| CliError::User("--basis one-year needs --basis-year".into()))?,
                },
            };
            contextual_measurement(panel, factor, basis).map_err(|e| CliError::User(e.to_string()))?
        }
    };
    let bins = quartile_bins(&vector.values);
    let order: Vec<&str> = vector.descending().into_iter().map(|(s, _)| s).collect();
    let doc = json!({
        "measurement": vector.measurement,
        "scope": vector.scope,
        "values": vector.values,
        "bins": bins,
        "order": order,
    });
    write_output(output, &json_document(doc, output))
}

fn open_service(data_dir: &Path) -> Result<Service> {
    if !data_dir.join("manifest.json").exists() {
        return Err(CliError::User(format!(
            "DATA_DIR {} does not contain ingested data (run `diffusion ingest`)",
            data_dir.display()
        )));
    }
    Service::open(data_dir).map_err(|e| CliError::User(e.to_string()))
}

fn precompute(data_dir: &Path, all: bool, output: &OutputArgs) -> Result<()> {
    let service = open_service(data_dir)?;
    let report = if all {
        service.precompute_all().map_err(|e| CliError::Compute(e.to_string()))?
    } else {
        let (status, body) = service.dispatch("map", &[]);
        if status != 200 {
            return Err(CliError::Compute(String::from_utf8_lossy(&body).into_owned()));
        }
        diffusion_server::PrecomputeReport { networks: 1, snapshots: 1, ..Default::default() }
    };
    progress(format!(
        "{} networks, {} snapshots, {} Cox fits ({} failed) cached under {}",
        report.networks,
        report.snapshots,
        report.cox_fits,
        report.cox_failures,
        Service::cache_dir(data_dir).display()
    ));
    if output.out.is_some() {
        write_output(output, &json_document(serde_json::to_value(&report).expect("report serializes"), output))?;
    }
    Ok(())
}

fn serve(data_dir: Option<&Path>, bind: IpAddr, port: u16, static_dir: Option<PathBuf>) -> Result<()> {
    let data_dir =
        data_dir.ok_or_else(|| CliError::User("DATA_DIR is not set; point it at an ingested data directory".into()))?;
    let service = Arc::new(open_service(data_dir)?);
    let addr = SocketAddr::new(bind, port);
    progress(format!("serving {} on http://{addr}", data_dir.display()));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Compute(e.to_string()))?;
    runtime
        .block_on(diffusion_server::serve(service, addr, static_dir))
        .map_err(|e| CliError::User(format!("cannot serve on {addr}: {e}")))
}

fn export(data_dir: &Path, scope: &ScopeArgs, cutoff: f64, output: &OutputArgs) -> Result<()> {
    scope.resolve()?;
    let service = open_service(data_dir)?;
    let params: BTreeMap<String, String> = [
        ("topic", scope.topic.clone()),
        ("from", scope.from.to_string()),
        ("to", scope.to.to_string()),
        ("cutoff", cutoff.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let bundle = service.export_bundle(&params).map_err(|e| {
        if e.status < 500 {
            CliError::User(e.detail)
        } else {
            CliError::Compute(e.detail)
        }
    })?;
    write_output(output, &json_document(bundle, output))
}

fn cascades_export(data: &DataArgs, scope: &ScopeArgs, output: &OutputArgs) -> Result<()> {
    let snapshot: DataSnapshot = data.load()?;
    let (topic, range) = scope.resolve()?;
    let filtered = filter_adoptions(&snapshot.table, topic, range).map_err(|e| CliError::User(e.to_string()))?;
    let set = build_cascades(&filtered);
    progress(format!("{} cascades, {} adoptions", set.cascades.len(), set.total_events()));
    write_output(output, &set.to_jsonl())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { data, output } => ingest(&data, &output),
        Command::Infer { data, scope, inference, output } => infer(&data, &scope, &inference, &output),
        Command::Cox { data, policy, all: _, ties, output } => cox(&data, policy.as_deref(), ties, &output),
        Command::Metrics { data, measurement, scope, inference, closeness_direction, basis, basis_year, output } => {
            metrics(&data, &measurement, &scope, &inference, closeness_direction, basis, basis_year, &output)
        }
        Command::Precompute { data_dir, all, output } => precompute(&data_dir, all, &output),
        Command::Serve { data_dir, port, bind, static_dir } => serve(data_dir.as_deref(), bind, port, static_dir),
        Command::Export { data_dir, scope, cutoff, output } => export(&data_dir, &scope, cutoff, &output),
        Command::Cascades { action: CascadesCommand::Export { data, scope, format: Format::Jsonl, output } } => {
            cascades_export(&data, &scope, &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::User(msg) | CliError::Compute(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
