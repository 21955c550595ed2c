//! CSV and JSON renderings of experiment results.
//!
//! CSV files start with one `#` comment line naming the schema version and
//! the run parameters, followed by one column-name line. JSON documents are
//! a single pretty-printed object with a `config` block that echoes every
//! resolved setting. Both use LF line endings and end with a newline.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use crate::experiment::EquivalenceTrial;
use crate::memory::SweepPoint;
use crate::trainer::TrainingTrace;

pub const SCHEMA: &str = "ols-attention v1";

/// Shortest round-trip decimal, switching to exponent form for very small or
/// very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn header(command: &str, fields: &[(&str, String)]) -> String {
    let mut line = format!("# {SCHEMA}, command={command}");
    for (k, v) in fields {
        let _ = write!(line, ", {k}={v}");
    }
    line.push('\n');
    line
}

pub fn train_csv(fields: &[(&str, String)], trace: &TrainingTrace) -> String {
    let mut s = header("train", fields);
    s.push_str("epoch,mse,rel_dist_to_ols,l_value\n");
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.epoch,
            fmt_f64(r.mse),
            fmt_f64(r.rel_dist_to_ols),
            fmt_f64(r.l_value)
        );
    }
    s
}

pub fn equiv_csv(fields: &[(&str, String)], trials: &[EquivalenceTrial]) -> String {
    let mut s = header("equiv", fields);
    s.push_str("trial,n,k,design,noisy,max_abs_diff,rel_frobenius_diff,whitening_residual\n");
    for t in trials {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            t.trial,
            t.report.n,
            t.report.k,
            t.design.as_str(),
            t.noisy,
            fmt_f64(t.report.max_abs_diff),
            fmt_f64(t.report.rel_frobenius_diff),
            fmt_f64(t.report.whitening_residual)
        );
    }
    s
}

pub fn shift_csv(fields: &[(&str, String)], points: &[SweepPoint]) -> String {
    let mut s = header("shift", fields);
    s.push_str("shift_kind,shift_param,relative_error,distortion_frobenius_dist_from_identity\n");
    for p in points {
        let r = &p.row;
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.shift_kind.as_str(),
            fmt_f64(r.shift_param),
            fmt_f64(r.relative_error),
            fmt_f64(r.distortion_frobenius_dist_from_identity)
        );
    }
    s
}

fn pretty(value: serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(&value).expect("JSON values always serialize");
    s.push('\n');
    s
}

pub fn train_json<C: Serialize, S: Serialize>(config: &C, trace: &TrainingTrace, summary: &S) -> String {
    pretty(json!({
        "schema": SCHEMA,
        "command": "train",
        "config": config,
        "seed": trace.seed,
        "l_star": trace.l_star,
        "ols_mse": trace.ols_mse,
        "summary": summary,
        "warnings": trace.warnings,
        "records": trace.records,
    }))
}

pub fn equiv_json<C: Serialize, S: Serialize>(config: &C, trials: &[EquivalenceTrial], summary: &S) -> String {
    pretty(json!({
        "schema": SCHEMA,
        "command": "equiv",
        "config": config,
        "summary": summary,
        "trials": trials,
    }))
}

pub fn shift_json<C: Serialize, S: Serialize>(config: &C, points: &[SweepPoint], summary: &S) -> String {
    pretty(json!({
        "schema": SCHEMA,
        "command": "shift",
        "config": config,
        "summary": summary,
        "points": points,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::EpochRecord;

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(2.0), "2");
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_f64(1e-4), "0.0001");
        assert_eq!(fmt_f64(3.2e-9), "3.2e-9");
        assert_eq!(fmt_f64(-1.5e20), "-1.5e20");
        for v in [0.1 + 0.2, 1.0 / 3.0, 6.02e23, -7.7e-13] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn train_csv_layout() {
        let trace = TrainingTrace {
            records: vec![EpochRecord {
                epoch: 1,
                mse: 0.5,
                rel_dist_to_ols: 0.25,
                l_value: 0.51,
            }],
            l_star: 1.7,
            seed: 3,
            ols_mse: 1e-4,
            warnings: vec![],
        };
        let csv = train_csv(&[("seed", "3".into())], &trace);
        assert_eq!(
            csv,
            "# ols-attention v1, command=train, seed=3\nepoch,mse,rel_dist_to_ols,l_value\n1,0.5,0.25,0.51\n"
        );
        let doc: serde_json::Value = serde_json::from_str(&train_json(&json!({"n": 1}), &trace, &json!({}))).unwrap();
        assert_eq!(doc["records"][0]["l_value"], 0.51);
        assert_eq!(doc["config"]["n"], 1);
    }
}
