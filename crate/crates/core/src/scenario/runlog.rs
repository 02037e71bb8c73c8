//! Per-step run records and their CSV / JSON-lines serialization.

use std::io::Write;

use nalgebra::{DVector, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::servoing::ServoMode;

pub const SCHEMA: &str = "tdacm-runlog/1";

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// `q - q_d`.
    pub e: DVector<f64>,
    /// Compensated features; NaN when the marker does not project.
    pub features: Vector6<f64>,
    pub feature_error: Vector6<f64>,
    pub mode: ServoMode,
    pub rotors: Vector4<f64>,
    pub tendons: DVector<f64>,
    pub delta_hat: DVector<f64>,
    pub lyapunov: f64,
    pub rmse: f64,
    pub local_visible: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    Horizon,
    Converged,
    ErrorGrowth,
    TargetLost,
    NonFinite,
    /// A numerical routine rejected its input (singular interaction matrix,
    /// zero thrust demand, ...).
    Failed,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Horizon => "horizon",
            Self::Converged => "converged",
            Self::ErrorGrowth => "error-growth",
            Self::TargetLost => "target-lost",
            Self::NonFinite => "non-finite",
            Self::Failed => "failed",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub name: String,
    pub perturbation: f64,
    pub seed: u64,
    pub initial_rmse: f64,
    pub final_rmse: f64,
    pub steps: usize,
    pub reason: TerminationReason,
    pub detail: Option<String>,
    /// Consecutive distinct servo modes.
    pub modes: Vec<ServoMode>,
    /// Whether every corner was inside the local image at some step.
    pub local_fov_reached: bool,
}

const Q_NAMES: [(&str, &str); 6] = [
    ("phi", "rad"),
    ("theta", "rad"),
    ("psi", "rad"),
    ("x", "m"),
    ("y", "m"),
    ("z", "m"),
];
const FORCE_UNITS: [&str; 6] = ["Nm", "Nm", "Nm", "N", "N", "N"];
const FEATURE_NAMES: [(&str, &str); 6] = [
    ("p_phi", "rad"),
    ("p_theta", "rad"),
    ("p_psi", "rad"),
    ("p_x", "norm"),
    ("p_y", "norm"),
    ("p_z", "norm"),
];

/// Column names with unit suffixes, for `n_s` rod coordinates and `n_a`
/// tendons.
pub fn csv_header(ns: usize, na: usize) -> Vec<String> {
    let coords: Vec<(String, &str)> = Q_NAMES
        .iter()
        .map(|(n, u)| (n.to_string(), *u))
        .chain((1..=ns).map(|i| (format!("qs{i}"), "1pm")))
        .collect();
    let mut h = vec!["t_s".to_string()];
    h.extend(coords.iter().map(|(n, u)| format!("{n}_{u}")));
    h.extend(coords.iter().map(|(n, u)| format!("d{n}_{u}ps")));
    h.extend(coords.iter().map(|(n, u)| format!("e_{n}_{u}")));
    h.extend(FEATURE_NAMES.iter().map(|(n, u)| format!("{n}_{u}")));
    h.extend(FEATURE_NAMES.iter().map(|(n, u)| format!("e_{n}_{u}")));
    h.push("mode".into());
    h.extend((1..=4).map(|i| format!("rotor{i}_N")));
    h.extend((1..=na).map(|i| format!("tendon{i}_N")));
    h.extend(
        coords
            .iter()
            .enumerate()
            .map(|(i, (n, _))| format!("delta_{n}_{}", FORCE_UNITS.get(i).copied().unwrap_or("Nm2"))),
    );
    h.push("V_J".into());
    h.push("rmse_norm".into());
    h
}

impl RunLog {
    pub fn write_csv<W: Write>(&self, mut out: W, ns: usize, na: usize) -> Result<()> {
        writeln!(out, "# schema={SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(csv_header(ns, na))?;
        for r in &self.records {
            let mut row: Vec<String> = vec![r.t.to_string()];
            let nums = r
                .q
                .iter()
                .chain(r.qdot.iter())
                .chain(r.e.iter())
                .chain(r.features.iter())
                .chain(r.feature_error.iter());
            row.extend(nums.map(|x| x.to_string()));
            row.push(r.mode.to_string());
            row.extend(r.rotors.iter().chain(r.tendons.iter()).chain(r.delta_hat.iter()).map(|x| x.to_string()));
            row.push(r.lyapunov.to_string());
            row.push(r.rmse.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, ns: usize, na: usize) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, ns, na)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

impl RunSummary {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(ns: usize, na: usize) -> StepRecord {
        let n = 6 + ns;
        StepRecord {
            t: 0.5,
            q: DVector::from_element(n, 0.25),
            qdot: DVector::zeros(n),
            e: DVector::zeros(n),
            features: Vector6::repeat(f64::NAN),
            feature_error: Vector6::repeat(f64::NAN),
            mode: ServoMode::Recovery,
            rotors: Vector4::repeat(1.5),
            tendons: DVector::from_element(na, 2.0),
            delta_hat: DVector::zeros(n),
            lyapunov: 0.125,
            rmse: f64::NAN,
            local_visible: false,
        }
    }

    #[test]
    fn header_layout() {
        let h = csv_header(2, 4);
        assert_eq!(h.len(), 1 + 3 * 8 + 12 + 1 + 4 + 4 + 8 + 2);
        assert_eq!(h[0], "t_s");
        assert_eq!(h[7], "qs1_1pm");
        assert_eq!(h[9], "dphi_radps");
        assert!(h.contains(&"e_p_x_norm".to_string()));
        assert!(h.contains(&"delta_z_N".to_string()));
        assert!(h.contains(&"delta_qs2_Nm2".to_string()));
        assert_eq!(h.last().unwrap(), "rmse_norm");
        let rigid = csv_header(0, 0);
        assert_eq!(rigid.len(), 1 + 3 * 6 + 12 + 1 + 4 + 6 + 2);
    }

    #[test]
    fn csv_rows_match_header() {
        let log = RunLog {
            records: vec![record(2, 4), record(2, 4)],
        };
        let text = log.to_csv_string(2, 4).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# schema={SCHEMA}"));
        let width = csv_header(2, 4).len();
        for line in lines {
            assert_eq!(line.split(',').count(), width);
        }
        assert!(text.contains("RECOVERY"));
        assert!(text.contains("NaN"));
    }

    #[test]
    fn summary_json() {
        let s = RunSummary {
            schema: SCHEMA.into(),
            name: "x".into(),
            perturbation: 0.1,
            seed: 3,
            initial_rmse: 0.2,
            final_rmse: 0.01,
            steps: 10,
            reason: TerminationReason::ErrorGrowth,
            detail: None,
            modes: vec![ServoMode::Recovery, ServoMode::Ibvs],
            local_fov_reached: true,
        };
        let line = s.to_json_line();
        assert!(!line.contains('\n'));
        assert!(line.contains(r#""reason":"error-growth""#));
        assert!(line.contains(r#""modes":["RECOVERY","IBVS"]"#));
        let back: RunSummary = serde_json::from_str(&line).unwrap();
        assert_eq!(back, s);
        assert_eq!(TerminationReason::TargetLost.to_string(), "target-lost");
    }
}
