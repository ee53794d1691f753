"""Smoke test for the pydoseopt extension: build with `maturin develop` first."""

import json

import pydoseopt


def record(pid, dose, eff, tox):
    events = []
    if tox:
        events.append({"day": 14, "kind": "toxicity", "grade": 3, "dlt": True})
    events.append({"day": 56, "kind": "assessment", "response": "PR" if eff else "SD"})
    return {"patient_id": pid, "dose_index": dose, "events": events}


def main():
    lam_e, lam_d = pydoseopt.boundaries(0.3)
    assert f"{lam_e:.4f} {lam_d:.4f}" == "0.2365 0.3585", (lam_e, lam_d)

    table = json.loads(pydoseopt.decision_table(3))
    assert len(table) == 1 + 4 + 10 + 20

    trial = pydoseopt.Trial(seed=7)
    first = trial.current_dose
    out = json.loads(trial.submit_cohort(json.dumps([record("P1", first, True, False)])))
    assert out["decision"]["kind"] in {"escalate", "stay", "de_escalate", "eliminate_and_de_escalate", "terminate"}
    rec = json.loads(trial.recommendation())
    assert rec["decision"] == out["decision"]

    again = pydoseopt.Trial.replay(trial.events())
    assert again.state() == trial.state()

    derived = json.loads(pydoseopt.derive_outcomes(json.dumps([record("A", 1, True, True)])))
    assert derived[0]["category"] == 3

    scenario = {
        "name": "smoke",
        "dose_grid": {"doses": [{"index": j, "label": f"D{j}", "amount": j, "unit": "mg"} for j in (1, 2, 3)]},
        "true_tox": [0.05, 0.15, 0.4],
        "true_eff": [0.2, 0.4, 0.5],
    }
    a = pydoseopt.simulate(json.dumps(scenario), reps=50, seed=3, parallelism=1)
    b = pydoseopt.simulate(json.dumps(scenario), reps=50, seed=3, parallelism=2)
    assert a == b
    assert abs(sum(json.loads(a)["obd_selection_pct"]) + json.loads(a)["none_selection_pct"] - 100) < 1e-9

    try:
        pydoseopt.boundaries(1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid target accepted")

    print("pydoseopt smoke test passed")


if __name__ == "__main__":
    main()
