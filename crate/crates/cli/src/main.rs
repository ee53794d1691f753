//! `doseopt` command-line interface. Data goes to stdout, diagnostics to stderr.
//!
//! Exit status: 0 on success, 1 when the input is invalid, 2 on runtime failures.

mod state;

use std::fs;
use std::io::{BufReader, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use doseopt::conduct::{DesignVariant, TrialDesign};
use doseopt::decision::{
    admissible_set, boin_boundaries, decision_table, evaluate_doses, next_dose, obd_from_states,
    randomization_weights, toxicity_only_next_dose, DecisionContext,
};
use doseopt::estimand::{build_analysis_set, compare_strategies, derive_outcome, AnalysisSetRule, PatientRecord, StrategyMap};
use doseopt::estimand::io::{read_csv, read_jsonl};
use doseopt::model::{Category, DesignConfig, UtilitySpec};
use doseopt::sensitivity::{tipping_scan, FlipScope, TippingOptions, TippingSearch};
use doseopt::simulator::{operating_characteristics, replication_rng, Scenario};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use state::{StateFile, STATE_HELP};

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Runtime(String),
}

impl From<doseopt::Error> for CliError {
    fn from(e: doseopt::Error) -> Self {
        if e.is_validation() {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "doseopt", version, about = "Utility-based Phase I/II dose optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Boin12,
    ToxicityOnly,
}

impl From<Variant> for DesignVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Boin12 => DesignVariant::Boin12,
            Variant::ToxicityOnly => DesignVariant::ToxicityOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Missing,
    FavorableAtObd,
    FavorableAll,
}

impl From<Scope> for FlipScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::Missing => FlipScope::Missing,
            Scope::FavorableAtObd => FlipScope::FavorableAtObd,
            Scope::FavorableAll => FlipScope::FavorableAll,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisSetArg {
    Default,
    AllTreated,
}

const RECORDS_HELP: &str = "\
Patient records come as JSON lines (one record per line) or, for files ending in .csv, as a
long table with columns patient_id, day, kind, detail:
  enroll      detail `dose=<j>;first_dose_day=<d>;baseline_ok=<bool>;stratum=<label>`
  assessment  detail CR | PR | SD | PD | NE
  toxicity    detail `<grade>` or `<grade>:dlt`
  ice         detail an ICE key (tox_discontinuation, death, additional_therapy,
              progression_discontinuation, ada_occurrence, surgery_clinician_choice,
              surgery_tumor_shrinkage, surgery_external_factors, nonadherence,
              symptomatic_deterioration) or `dose_switch:<j>`
A JSON record is {patient_id, dose_index, first_dose_day, events: [{day, kind, ...}],
stratum_label, baseline_ok}; event kinds are assessment {response}, toxicity {grade, dlt}
and ice {ice: {type, ...}}.

A strategy map is {entries: {<ice key>: <strategy> | {strategy, favorable}},
efficacy_success_set: [CR, PR], dlt_window_days: 28, dose_switch_attribution: starting |
last, analysis_stratum}. Strategies: treatment_policy, composite, hypothetical,
while_on_treatment, principal_stratum. Omitted maps use the case-study defaults.";

const SIM_HELP: &str = "\
scenario.json: {name, description, dose_grid {doses: [{index, label, amount, unit}]}, true_tox: [..], true_eff: [..],
eff_tox_correlation (odds ratio, default 1), ice_probabilities: {<ice key>: p | [p per dose]},
stratum_fraction, post_ice_response_prob, low_grade_ae_prob: [..]}.
design.json: a design config (see `decide --help`); the dose grid comes from the scenario.";

#[derive(Subcommand)]
enum Command {
    /// Print the BOIN escalation and de-escalation boundaries.
    Boundaries {
        /// Target DLT rate.
        #[arg(long)]
        phi: f64,
        /// Highest rate still deemed subtherapeutic (default 0.6 phi).
        #[arg(long)]
        phi1: Option<f64>,
        /// Lowest rate deemed overly toxic (default 1.4 phi).
        #[arg(long)]
        phi2: Option<f64>,
    },
    /// Pretabulate decisions for every outcome configuration at one dose.
    #[command(after_long_help = "design.json is a design config; psi.json a utility spec {categories: [{efficacy_flag, toxicity_flag, psi}]}.")]
    Table {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        utility: Option<PathBuf>,
        /// Largest number of patients at the dose.
        #[arg(long = "max-n")]
        max_n: u32,
        #[arg(long, value_enum, default_value = "csv")]
        format: TableFormat,
    },
    /// Next-dose decision with per-dose posterior summaries.
    #[command(after_long_help = STATE_HELP)]
    Decide {
        #[arg(long)]
        state: PathBuf,
    },
    /// Derive outcome categories from patient timelines under a strategy map.
    #[command(after_long_help = RECORDS_HELP)]
    Derive {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        utility: Option<PathBuf>,
        /// Apply an analysis-set rule and report exclusions.
        #[arg(long, value_enum)]
        analysis_set: Option<AnalysisSetArg>,
    },
    /// Compare strategy maps on the same records.
    #[command(after_long_help = RECORDS_HELP)]
    Whatif {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        maps: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        utility: Option<PathBuf>,
        /// Number of dose levels (default: highest dose in the records).
        #[arg(long)]
        doses: Option<usize>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
    /// Optimal biological dose, isotonic MTD and rationale.
    #[command(after_long_help = STATE_HELP)]
    Obd {
        #[arg(long)]
        state: PathBuf,
    },
    /// Operating characteristics by Monte Carlo simulation.
    #[command(after_long_help = SIM_HELP)]
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        utility: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        reps: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, value_enum, default_value = "boin12")]
        variant: Variant,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-dose CSV summary here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Smallest number of outcome flips that changes the OBD.
    #[command(after_long_help = STATE_HELP)]
    Tipping {
        #[arg(long)]
        state: PathBuf,
        /// Search every subset of flaggable patients (at most 20).
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, value_enum, default_value = "missing")]
        scope: Scope,
        /// Category index to flip to (default: the lowest-utility category).
        #[arg(long)]
        flip_to: Option<usize>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "DOSEOPT_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "DOSEOPT_BIND", default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long = "data-dir", env = "DOSEOPT_DATA_DIR", default_value = "./data")]
        data_dir: PathBuf,
        /// Most simulation threads a single job may use.
        #[arg(long, env = "DOSEOPT_MAX_PARALLELISM")]
        max_parallelism: Option<usize>,
    },
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn read_opt<T: DeserializeOwned>(path: &Option<PathBuf>) -> CliResult<Option<T>> {
    path.as_deref().map(read_json).transpose()
}

fn read_records(path: &Path) -> CliResult<Vec<PatientRecord>> {
    let file = fs::File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let records = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(file)?
    } else {
        read_jsonl(BufReader::new(file))?
    };
    Ok(records)
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn out(text: &str) -> CliResult {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Runtime(e.to_string())),
        _ => Ok(()),
    }
}

fn emit<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    out(&(text + "\n"))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn spec_or_default(spec: Option<UtilitySpec>) -> CliResult<UtilitySpec> {
    let spec = spec.unwrap_or_else(UtilitySpec::example);
    let report = spec.validate();
    if !report.is_valid() {
        return Err(CliError::Invalid(format!("utility spec: {}", report.violations.join("; "))));
    }
    Ok(spec)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Boundaries { phi, phi1, phi2 } => {
            let (le, ld) = boin_boundaries(phi, phi1, phi2)?;
            out(&format!("lambda_e={le:.4} lambda_d={ld:.4}\n"))?;
        }
        Command::Table {
            config,
            utility,
            max_n,
            format,
        } => {
            let config = read_opt::<DesignConfig>(&config)?.unwrap_or_else(DesignConfig::case_study);
            let spec = spec_or_default(read_opt(&utility)?)?;
            config.check(&spec, 1)?;
            let table = decision_table(&config, &spec, max_n)?;
            match format {
                TableFormat::Csv => out(&table.to_csv())?,
                TableFormat::Json => out(&table.to_json())?,
            }
        }
        Command::Decide { state } => {
            let file: StateFile = read_json(&state)?;
            let design = file.design();
            design.validate()?;
            let (outcomes, states) = file.derive(&design)?;
            let summaries = evaluate_doses(&states, &design.spec, &design.config)?;
            let ctx = DecisionContext {
                current: file.current(&design),
                states: &states,
                summaries: &summaries,
                spec: &design.spec,
                titration_active: file.titration_active,
            };
            let decision = match file.variant {
                DesignVariant::Boin12 => next_dose(&ctx, &design.config, &mut replication_rng(file.seed, 0))?,
                DesignVariant::ToxicityOnly => toxicity_only_next_dose(&ctx, &design.config)?,
            };
            let admissible = admissible_set(&summaries, &design.config);
            let weights = randomization_weights(&summaries, &admissible).ok();
            emit(&json!({
                "decision": decision,
                "summaries": summaries,
                "admissible": admissible,
                "weights": weights,
                "derived": outcomes,
            }))?;
        }
        Command::Derive {
            records,
            map,
            utility,
            analysis_set,
        } => {
            let records = read_records(&records)?;
            let map = read_opt::<StrategyMap>(&map)?.unwrap_or_default();
            let spec = spec_or_default(read_opt(&utility)?)?;
            match analysis_set {
                None => {
                    let outcomes = records
                        .iter()
                        .map(|r| derive_outcome(r, &map, &spec))
                        .collect::<doseopt::Result<Vec<_>>>()?;
                    emit(&outcomes)?;
                }
                Some(rule) => {
                    let rule = match rule {
                        AnalysisSetArg::Default => AnalysisSetRule::AllTreatedWithBaselineAndPostbaseline,
                        AnalysisSetArg::AllTreated => AnalysisSetRule::AllTreated,
                    };
                    emit(&build_analysis_set(&records, &map, &spec, &rule)?)?;
                }
            }
        }
        Command::Whatif {
            records,
            maps,
            config,
            utility,
            doses,
            format,
        } => {
            let records = read_records(&records)?;
            let maps = maps.iter().map(|p| read_json(p)).collect::<CliResult<Vec<StrategyMap>>>()?;
            let config = read_opt::<DesignConfig>(&config)?.unwrap_or_else(DesignConfig::case_study);
            let spec = spec_or_default(read_opt(&utility)?)?;
            let num_doses = doses.unwrap_or_else(|| records.iter().map(|r| r.dose_index).max().unwrap_or(1));
            let cmp = compare_strategies(&records, &maps, &spec, &config, num_doses)?;
            match format {
                ReportFormat::Json => emit(&cmp)?,
                ReportFormat::Text => out(&cmp.render_text())?,
            }
        }
        Command::Obd { state } => {
            let file: StateFile = read_json(&state)?;
            let design = file.design();
            design.validate()?;
            let (_, states) = file.derive(&design)?;
            let (summaries, selection) = obd_from_states(&states, &design.spec, &design.config)?;
            emit(&json!({
                "obd": selection.obd,
                "mtd": selection.mtd,
                "rationale": selection.rationale,
                "admissible": selection.admissible,
                "summaries": summaries,
            }))?;
        }
        Command::Simulate {
            scenario,
            config,
            utility,
            map,
            reps,
            seed,
            jobs,
            variant,
            out: out_path,
            csv,
        } => {
            let scenario: Scenario = read_json(&scenario)?;
            let base = TrialDesign::case_study();
            let design = TrialDesign::new(
                read_opt(&config)?.unwrap_or(base.config),
                spec_or_default(read_opt(&utility)?)?,
                scenario.dose_grid.clone(),
                read_opt(&map)?.unwrap_or(base.strategy_map),
            );
            let oc = operating_characteristics(&scenario, &design, variant.into(), reps, seed, jobs)?;
            let text = serde_json::to_string_pretty(&oc).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
            match out_path {
                Some(path) => write_file(&path, &text)?,
                None => out(&text)?,
            }
            if let Some(path) = csv {
                write_file(&path, &oc.to_csv())?;
            }
        }
        Command::Tipping {
            state,
            exhaustive,
            scope,
            flip_to,
            format,
        } => {
            let file: StateFile = read_json(&state)?;
            let design = file.design();
            design.validate()?;
            if let Some(k) = flip_to {
                if k == 0 || k > design.spec.k() {
                    return Err(CliError::Invalid(format!("--flip-to must lie in 1..={}", design.spec.k())));
                }
            }
            let options = TippingOptions {
                flip_to: flip_to.map(Category::new),
                scope: scope.into(),
                search: if exhaustive {
                    TippingSearch::Subsets
                } else {
                    TippingSearch::Grouped
                },
            };
            let report = tipping_scan(
                &file.records,
                &design.strategy_map,
                &design.spec,
                &design.config,
                design.num_doses(),
                options,
            )?;
            match format {
                ReportFormat::Json => emit(&report)?,
                ReportFormat::Text => out(&report.render_text())?,
            }
        }
        Command::Serve {
            port,
            bind,
            data_dir,
            max_parallelism,
        } => {
            let mut config = doseopt_service::ServiceConfig {
                data_dir,
                addr: SocketAddr::new(bind, port),
                ..Default::default()
            };
            if let Some(p) = max_parallelism {
                config.max_parallelism = p;
            }
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            runtime
                .block_on(doseopt_service::serve(config))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    Ok(())
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
        Err(CliError::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
