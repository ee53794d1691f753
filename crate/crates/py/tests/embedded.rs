use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(pydoseopt::pydoseopt)(py);
        let globals = PyDict::new(py);
        globals.set_item("pydoseopt", module).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn boundaries_and_errors_cross_the_boundary() {
    run(r#"
lam_e, lam_d = pydoseopt.boundaries(0.3)
assert abs(lam_e - 0.23649) < 1e-4 and abs(lam_d - 0.35852) < 1e-4
try:
    pydoseopt.boundaries(0.0)
    raise AssertionError("accepted")
except ValueError:
    pass
"#);
}

#[test]
fn trial_log_replays_to_the_same_state() {
    run(r#"
import json
trial = pydoseopt.Trial(seed=3)
for i in range(3):
    dose = trial.current_dose
    cohort = [{"patient_id": f"P{i}{k}", "dose_index": dose,
               "events": [{"day": 56, "kind": "assessment", "response": "CR"}]} for k in range(3)]
    if trial.terminated:
        break
    trial.submit_cohort(json.dumps(cohort))
copy = pydoseopt.Trial.replay(trial.events())
assert copy.state() == trial.state()
assert copy.total_enrolled == trial.total_enrolled
sel = json.loads(trial.selection())
assert "obd" in sel
"#);
}
