//! Patient-record ingestion and export.
//!
//! Two formats are supported. JSON lines hold one [`PatientRecord`] object per line.
//! The CSV long format has the columns `patient_id, day, kind, detail`, one row per event:
//!
//! | kind         | detail                                                            |
//! |--------------|-------------------------------------------------------------------|
//! | `enroll`     | `dose=3;first_dose_day=0;baseline_ok=true;stratum=S1` (dose required) |
//! | `assessment` | response grade: `CR`, `PR`, `SD`, `PD` or `NE`                      |
//! | `toxicity`   | grade, with `:dlt` appended for dose-limiting events (`3:dlt`)    |
//! | `ice`        | ICE key such as `death` or `surgery_tumor_shrinkage`; `dose_switch:N` |
//!
//! Every patient needs exactly one `enroll` row; its `day` cell may be empty. Events are
//! sorted by day (stable) when a record is assembled. Record order follows first appearance.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Event, EventKind, IceKey, IceType, PatientRecord, ResponseGrade, SurgeryReason};
use crate::error::{Error, Result};

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<PatientRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[PatientRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    patient_id: String,
    day: Option<i64>,
    kind: String,
    #[serde(default)]
    detail: String,
}

fn invalid(patient_id: &str, reason: impl Into<String>) -> Error {
    Error::InvalidRecord {
        patient_id: patient_id.to_string(),
        reason: reason.into(),
    }
}

fn parse_grade(s: &str) -> Option<ResponseGrade> {
    match s.trim() {
        "CR" => Some(ResponseGrade::CR),
        "PR" => Some(ResponseGrade::PR),
        "SD" => Some(ResponseGrade::SD),
        "PD" => Some(ResponseGrade::PD),
        "NE" => Some(ResponseGrade::NE),
        _ => None,
    }
}

fn grade_str(g: ResponseGrade) -> &'static str {
    match g {
        ResponseGrade::CR => "CR",
        ResponseGrade::PR => "PR",
        ResponseGrade::SD => "SD",
        ResponseGrade::PD => "PD",
        ResponseGrade::NE => "NE",
    }
}

fn parse_ice(pid: &str, detail: &str) -> Result<IceType> {
    let detail = detail.trim();
    if let Some(target) = detail.strip_prefix("dose_switch:") {
        let new_dose_index = target
            .trim()
            .parse()
            .map_err(|_| invalid(pid, format!("bad dose_switch target `{target}`")))?;
        return Ok(IceType::DoseSwitch { new_dose_index });
    }
    let key = IceKey::parse(detail).ok_or_else(|| invalid(pid, format!("unknown ICE `{detail}`")))?;
    Ok(match key {
        IceKey::ToxDiscontinuation => IceType::ToxDiscontinuation,
        IceKey::Death => IceType::Death,
        IceKey::AdditionalTherapy => IceType::AdditionalTherapy,
        IceKey::ProgressionDiscontinuation => IceType::ProgressionDiscontinuation,
        IceKey::AdaOccurrence => IceType::AdaOccurrence,
        IceKey::DoseSwitch => return Err(invalid(pid, "dose_switch needs a target: `dose_switch:N`")),
        IceKey::SurgeryClinicianChoice => IceType::Surgery {
            reason: SurgeryReason::ClinicianChoice,
        },
        IceKey::SurgeryTumorShrinkage => IceType::Surgery {
            reason: SurgeryReason::TumorShrinkage,
        },
        IceKey::SurgeryExternalFactors => IceType::Surgery {
            reason: SurgeryReason::ExternalFactors,
        },
        IceKey::Nonadherence => IceType::Nonadherence,
        IceKey::SymptomaticDeterioration => IceType::SymptomaticDeterioration,
    })
}

fn ice_detail(ice: IceType) -> String {
    match ice {
        IceType::DoseSwitch { new_dose_index } => format!("dose_switch:{new_dose_index}"),
        other => other.key().as_str().to_string(),
    }
}

fn apply_enroll(record: &mut PatientRecord, detail: &str) -> Result<bool> {
    let pid = record.patient_id.clone();
    let mut saw_dose = false;
    for part in detail.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| invalid(&pid, format!("enroll field `{part}` is not key=value")))?;
        let bad = |what: &str| invalid(&pid, format!("bad {what} `{value}`"));
        match key.trim() {
            "dose" => {
                record.dose_index = value.trim().parse().map_err(|_| bad("dose"))?;
                saw_dose = true;
            }
            "first_dose_day" => record.first_dose_day = value.trim().parse().map_err(|_| bad("first_dose_day"))?,
            "baseline_ok" => record.baseline_ok = value.trim().parse().map_err(|_| bad("baseline_ok"))?,
            "stratum" => record.stratum_label = Some(value.trim().to_string()),
            other => return Err(invalid(&pid, format!("unknown enroll field `{other}`"))),
        }
    }
    Ok(saw_dose)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<PatientRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut records: Vec<(PatientRecord, bool)> = Vec::new();
    let mut pending: Vec<(String, Event)> = Vec::new();

    for row in rdr.deserialize() {
        let row: Row = row?;
        let pid = row.patient_id.as_str();
        let day = || row.day.ok_or_else(|| invalid(pid, format!("`{}` row needs a day", row.kind)));
        match row.kind.as_str() {
            "enroll" => {
                if records.iter().any(|(r, _)| r.patient_id == pid) {
                    return Err(invalid(pid, "more than one enroll row"));
                }
                let mut rec = PatientRecord::new(pid, 0);
                let saw_dose = apply_enroll(&mut rec, &row.detail)?;
                records.push((rec, saw_dose));
            }
            "assessment" => {
                let g = parse_grade(&row.detail)
                    .ok_or_else(|| invalid(pid, format!("unknown response grade `{}`", row.detail)))?;
                pending.push((pid.to_string(), Event::assessment(day()?, g)));
            }
            "toxicity" => {
                let (grade, dlt) = match row.detail.split_once(':') {
                    Some((g, flag)) if flag.trim() == "dlt" => (g, true),
                    Some(_) => return Err(invalid(pid, format!("bad toxicity detail `{}`", row.detail))),
                    None => (row.detail.as_str(), false),
                };
                let grade: u8 = grade
                    .trim()
                    .parse()
                    .map_err(|_| invalid(pid, format!("bad toxicity grade `{grade}`")))?;
                pending.push((pid.to_string(), Event::toxicity(day()?, grade, dlt)));
            }
            "ice" => pending.push((pid.to_string(), Event::ice(day()?, parse_ice(pid, &row.detail)?))),
            other => return Err(invalid(pid, format!("unknown row kind `{other}`"))),
        }
    }

    for (pid, event) in pending {
        let (rec, _) = records
            .iter_mut()
            .find(|(r, _)| r.patient_id == pid)
            .ok_or_else(|| invalid(&pid, "events without an enroll row"))?;
        rec.events.push(event);
    }
    records
        .into_iter()
        .map(|(mut rec, saw_dose)| {
            if !saw_dose {
                return Err(invalid(&rec.patient_id, "enroll row lacks dose="));
            }
            rec.events.sort_by_key(|e| e.day);
            Ok(rec)
        })
        .collect()
}

pub fn write_csv<W: Write>(writer: W, records: &[PatientRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        let mut enroll = format!(
            "dose={};first_dose_day={};baseline_ok={}",
            r.dose_index, r.first_dose_day, r.baseline_ok
        );
        if let Some(s) = &r.stratum_label {
            enroll.push_str(&format!(";stratum={s}"));
        }
        w.serialize(Row {
            patient_id: r.patient_id.clone(),
            day: None,
            kind: "enroll".into(),
            detail: enroll,
        })?;
        for e in &r.events {
            let (kind, detail) = match e.kind {
                EventKind::Assessment { response } => ("assessment", grade_str(response).to_string()),
                EventKind::Toxicity { grade, dlt } => ("toxicity", if dlt { format!("{grade}:dlt") } else { grade.to_string() }),
                EventKind::Ice { ice } => ("ice", ice_detail(ice)),
            };
            w.serialize(Row {
                patient_id: r.patient_id.clone(),
                day: Some(e.day),
                kind: kind.into(),
                detail,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<PatientRecord> {
        vec![
            PatientRecord::new("P1", 2)
                .with_event(Event::toxicity(10, 3, true))
                .with_event(Event::assessment(28, ResponseGrade::SD))
                .with_event(Event::ice(28, IceType::ToxDiscontinuation))
                .with_event(Event::assessment(84, ResponseGrade::CR)),
            PatientRecord::new("P2", 1)
                .with_stratum("S1")
                .with_event(Event::ice(14, IceType::DoseSwitch { new_dose_index: 2 }))
                .with_event(Event::ice(
                    40,
                    IceType::Surgery {
                        reason: SurgeryReason::TumorShrinkage,
                    },
                )),
        ]
    }

    #[test]
    fn jsonl_round_trip() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &sample()).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 2);
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("patient_id,day,kind,detail\n"));
        assert!(text.contains("P1,10,toxicity,3:dlt"));
        assert!(text.contains("P2,14,ice,dose_switch:2"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let no_enroll = "patient_id,day,kind,detail\nP1,3,assessment,CR\n";
        assert!(read_csv(no_enroll.as_bytes()).is_err());
        let bad_grade = "patient_id,day,kind,detail\nP1,,enroll,dose=1\nP1,3,assessment,XX\n";
        assert!(read_csv(bad_grade.as_bytes()).is_err());
        let bad_ice = "patient_id,day,kind,detail\nP1,,enroll,dose=1\nP1,3,ice,dose_switch\n";
        assert!(read_csv(bad_ice.as_bytes()).is_err());
        let no_dose = "patient_id,day,kind,detail\nP1,,enroll,stratum=A\n";
        assert!(read_csv(no_dose.as_bytes()).is_err());
    }

    #[test]
    fn csv_sorts_events() {
        let text = "patient_id,day,kind,detail\nP1,,enroll,dose=1\nP1,56,assessment,PR\nP1,3,toxicity,2\n";
        let recs = read_csv(text.as_bytes()).unwrap();
        assert_eq!(recs[0].events[0].day, 3);
        assert!(recs[0].validate().is_ok());
    }

    #[test]
    fn jsonl_reports_line() {
        let err = read_jsonl("{}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse(m) if m.starts_with("line 1")));
    }
}
