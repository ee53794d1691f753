//! Python bindings. Structured values cross the boundary as JSON strings using the same
//! v1 schemas as the CLI and the HTTP service, so Python callers can use `json.loads`.

use doseopt::conduct::{DesignVariant, TrialDesign};
use doseopt::decision::{boin_boundaries, decision_table as build_table};
use doseopt::estimand::{compare_strategies as compare, derive_outcome, PatientRecord, StrategyMap};
use doseopt::model::{DesignConfig, UtilitySpec};
use doseopt::sensitivity::{tipping_scan, TippingOptions};
use doseopt::session::{SessionEvent, TrialSession};
use doseopt::simulator::{operating_characteristics, Scenario};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn py_err(e: doseopt::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyOSError::new_err(e.to_string())
    }
}

fn parse<T: DeserializeOwned>(what: &str, json: &str) -> PyResult<T> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn parse_opt<T: DeserializeOwned>(what: &str, json: Option<&str>) -> PyResult<Option<T>> {
    json.map(|j| parse(what, j)).transpose()
}

fn dump<T: Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn variant(name: &str) -> PyResult<DesignVariant> {
    match name {
        "boin12" => Ok(DesignVariant::Boin12),
        "toxicity_only" => Ok(DesignVariant::ToxicityOnly),
        other => Err(PyValueError::new_err(format!("unknown variant `{other}`"))),
    }
}

fn spec_or_default(json: Option<&str>) -> PyResult<UtilitySpec> {
    Ok(parse_opt("spec", json)?.unwrap_or_else(UtilitySpec::example))
}

/// Escalation and de-escalation boundaries `(lambda_e, lambda_d)` for a target DLT rate.
#[pyfunction]
#[pyo3(signature = (phi, phi1=None, phi2=None))]
fn boundaries(phi: f64, phi1: Option<f64>, phi2: Option<f64>) -> PyResult<(f64, f64)> {
    boin_boundaries(phi, phi1, phi2).map_err(py_err)
}

/// Decision table for up to `max_n` patients at one dose, as JSON (or CSV with `fmt="csv"`).
#[pyfunction]
#[pyo3(signature = (max_n, config=None, spec=None, fmt="json"))]
fn decision_table(max_n: u32, config: Option<&str>, spec: Option<&str>, fmt: &str) -> PyResult<String> {
    let config: DesignConfig = parse_opt("config", config)?.unwrap_or_else(DesignConfig::case_study);
    let spec = spec_or_default(spec)?;
    let table = build_table(&config, &spec, max_n).map_err(py_err)?;
    match fmt {
        "json" => Ok(table.to_json()),
        "csv" => Ok(table.to_csv()),
        other => Err(PyValueError::new_err(format!("unknown format `{other}`"))),
    }
}

/// Derived outcome per record (a JSON list of records in, a JSON list out).
#[pyfunction]
#[pyo3(signature = (records, strategy_map=None, spec=None))]
fn derive_outcomes(records: &str, strategy_map: Option<&str>, spec: Option<&str>) -> PyResult<String> {
    let records: Vec<PatientRecord> = parse("records", records)?;
    let map: StrategyMap = parse_opt("strategy_map", strategy_map)?.unwrap_or_default();
    let spec = spec_or_default(spec)?;
    let out = records
        .iter()
        .map(|r| derive_outcome(r, &map, &spec))
        .collect::<doseopt::Result<Vec<_>>>()
        .map_err(py_err)?;
    dump(&out)
}

/// Side-by-side results of several strategy maps applied to the same records.
#[pyfunction]
#[pyo3(signature = (records, maps, num_doses, config=None, spec=None))]
fn compare_strategies(
    records: &str,
    maps: Vec<String>,
    num_doses: usize,
    config: Option<&str>,
    spec: Option<&str>,
) -> PyResult<String> {
    let records: Vec<PatientRecord> = parse("records", records)?;
    let maps = maps
        .iter()
        .map(|m| parse::<StrategyMap>("strategy_map", m))
        .collect::<PyResult<Vec<_>>>()?;
    let config: DesignConfig = parse_opt("config", config)?.unwrap_or_else(DesignConfig::case_study);
    let spec = spec_or_default(spec)?;
    dump(&compare(&records, &maps, &spec, &config, num_doses).map_err(py_err)?)
}

/// Operating characteristics over `reps` simulated trials. Releases the GIL while running.
#[pyfunction]
#[pyo3(signature = (scenario, design=None, variant="boin12", reps=1000, seed=42, parallelism=1))]
fn simulate(
    py: Python<'_>,
    scenario: &str,
    design: Option<&str>,
    variant: &str,
    reps: u64,
    seed: u64,
    parallelism: usize,
) -> PyResult<String> {
    let scenario: Scenario = parse("scenario", scenario)?;
    let design = match parse_opt::<TrialDesign>("design", design)? {
        Some(d) => d,
        None => {
            let mut d = TrialDesign::case_study();
            d.grid = scenario.dose_grid.clone();
            d
        }
    };
    let variant = self::variant(variant)?;
    let oc = py
        .detach(|| operating_characteristics(&scenario, &design, variant, reps, seed, parallelism))
        .map_err(py_err)?;
    dump(&oc)
}

/// An in-memory trial: cohorts go in, decisions come out, and the event log can be
/// exported and replayed.
#[pyclass(name = "Trial")]
struct PyTrial {
    session: TrialSession,
    log: Vec<SessionEvent>,
}

#[pymethods]
impl PyTrial {
    #[new]
    #[pyo3(signature = (design=None, variant="boin12", seed=0, trial_id="trial"))]
    fn new(design: Option<&str>, variant: &str, seed: u64, trial_id: &str) -> PyResult<Self> {
        let design: TrialDesign = parse_opt("design", design)?.unwrap_or_else(TrialDesign::case_study);
        design.validate().map_err(py_err)?;
        let created = SessionEvent::TrialCreated {
            trial_id: trial_id.to_string(),
            design,
            variant: self::variant(variant)?,
            seed,
        };
        let session = TrialSession::replay([&created]).map_err(py_err)?;
        Ok(PyTrial {
            session,
            log: vec![created],
        })
    }

    /// Rebuilds a trial from a JSON list of events previously returned by `events()`.
    #[staticmethod]
    fn replay(events: &str) -> PyResult<Self> {
        let log: Vec<SessionEvent> = parse("events", events)?;
        let session = TrialSession::replay(&log).map_err(py_err)?;
        Ok(PyTrial { session, log })
    }

    /// Enters a cohort (JSON list of records); returns the derived outcomes and decision.
    fn submit_cohort(&mut self, records: &str) -> PyResult<String> {
        let records: Vec<PatientRecord> = parse("records", records)?;
        let (events, outcome) = self.session.cohort_events(records).map_err(py_err)?;
        for ev in &events {
            self.session.apply(ev).map_err(py_err)?;
        }
        self.log.extend(events);
        dump(&outcome)
    }

    /// Replaces the ICE strategy map and re-derives every recorded outcome.
    fn amend_map(&mut self, strategy_map: &str) -> PyResult<()> {
        let event = SessionEvent::MapAmended {
            strategy_map: parse("strategy_map", strategy_map)?,
        };
        self.session.apply(&event).map_err(py_err)?;
        self.log.push(event);
        Ok(())
    }

    fn recommendation(&self) -> PyResult<String> {
        dump(&self.session.recommendation().map_err(py_err)?)
    }

    /// Final OBD/MTD selection from the data so far.
    fn selection(&self) -> PyResult<String> {
        dump(&self.session.selection().map_err(py_err)?)
    }

    #[pyo3(signature = (options=None))]
    fn tipping(&self, options: Option<&str>) -> PyResult<String> {
        let options: TippingOptions = parse_opt("options", options)?.unwrap_or_default();
        let design = &self.session.design;
        let records: Vec<PatientRecord> = self.session.state.records.clone();
        let report = tipping_scan(
            &records,
            &design.strategy_map,
            &design.spec,
            &design.config,
            design.num_doses(),
            options,
        )
        .map_err(py_err)?;
        dump(&report)
    }

    fn events(&self) -> PyResult<String> {
        dump(&self.log)
    }

    fn state(&self) -> PyResult<String> {
        dump(&self.session)
    }

    #[getter]
    fn current_dose(&self) -> usize {
        self.session.state.current_dose
    }

    #[getter]
    fn total_enrolled(&self) -> u32 {
        self.session.state.total_enrolled()
    }

    #[getter]
    fn terminated(&self) -> bool {
        self.session.state.is_terminated()
    }
}

#[pymodule]
pub fn pydoseopt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(boundaries, m)?)?;
    m.add_function(wrap_pyfunction!(decision_table, m)?)?;
    m.add_function(wrap_pyfunction!(derive_outcomes, m)?)?;
    m.add_function(wrap_pyfunction!(compare_strategies, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<PyTrial>()?;
    Ok(())
}
