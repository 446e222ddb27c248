//! Row and file formats: one `SweepRow` per evaluated point, CSV with exact
//! round-trip floats, JSON with a self-describing metadata object.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use squeezelab_core::{Error as CoreError, EvaluatedPoint, Method};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Column order of the CSV header; kept in one place so tests can assert
/// the emitted header never drifts from the struct.
pub const CSV_HEADER: &str = "engine,r,q_target,q_measured,tau,delta_phi,delta_phi_se,\
delta_phi_atoms_only,qcrb,qcrb_se,n_traj,n_diverged,wall_time,flags";

/// One evaluated sweep point. Numeric fields are NaN only when the point
/// failed, in which case `flags` names the failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub engine: String,
    pub r: f64,
    pub q_target: f64,
    pub q_measured: f64,
    pub tau: f64,
    pub delta_phi: f64,
    pub delta_phi_se: f64,
    pub delta_phi_atoms_only: f64,
    pub qcrb: f64,
    pub qcrb_se: f64,
    pub n_traj: u64,
    pub n_diverged: u64,
    pub wall_time: f64,
    /// Plus-joined marker tokens, empty when the row is unremarkable.
    pub flags: String,
}

impl SweepRow {
    pub fn from_point(p: &EvaluatedPoint, wall_time: f64) -> Self {
        let mut flags = Flags::new();
        if !p.calibration_converged {
            flags.push("calibration_failed");
        }
        if p.delta_phi.value == 0.0 && p.n_trajectories > 0 {
            // A Monte Carlo variance estimate only lands on exactly zero by
            // clamping; the sensitivity is an upper-limit statement.
            flags.push("variance_clamped");
        }
        SweepRow {
            engine: p.method.as_str().to_string(),
            r: p.r,
            q_target: p.q_target,
            q_measured: p.q_measured.value,
            tau: p.tau,
            delta_phi: p.delta_phi.value,
            delta_phi_se: p.delta_phi.se,
            delta_phi_atoms_only: p.delta_phi_atoms_only.value,
            qcrb: p.qcrb.value,
            qcrb_se: p.qcrb.se,
            n_traj: p.n_trajectories as u64,
            n_diverged: p.n_diverged as u64,
            wall_time,
            flags: flags.finish(),
        }
    }

    /// Placeholder row for a point whose evaluation failed; the error kind
    /// lands in `flags` and every measured quantity is NaN.
    pub fn failed(engine: &str, r: f64, q_target: f64, err: &CoreError) -> Self {
        SweepRow {
            engine: engine.to_string(),
            r,
            q_target,
            q_measured: f64::NAN,
            tau: f64::NAN,
            delta_phi: f64::NAN,
            delta_phi_se: f64::NAN,
            delta_phi_atoms_only: f64::NAN,
            qcrb: f64::NAN,
            qcrb_se: f64::NAN,
            n_traj: 0,
            n_diverged: 0,
            wall_time: 0.0,
            flags: format!("error:{}", error_code(err)),
        }
    }

    /// Constant reference line encoded as a row so CSV output stays
    /// self-contained; `name` lands in `flags` as `reference:<name>`.
    pub fn reference(name: &str, value: f64) -> Self {
        SweepRow {
            engine: "reference".to_string(),
            r: 0.0,
            q_target: 0.0,
            q_measured: 0.0,
            tau: 0.0,
            delta_phi: value,
            delta_phi_se: 0.0,
            delta_phi_atoms_only: value,
            qcrb: value,
            qcrb_se: 0.0,
            n_traj: 0,
            n_diverged: 0,
            wall_time: 0.0,
            flags: format!("reference:{name}"),
        }
    }

    pub fn with_flag(mut self, token: &str) -> Self {
        let mut flags = Flags::from_joined(&self.flags);
        flags.push(token);
        self.flags = flags.finish();
        self
    }

    pub fn has_flag(&self, token: &str) -> bool {
        self.flags.split('+').any(|t| t == token)
    }

    /// Bit-exact equality, treating NaN as equal to NaN; the round-trip
    /// contract is about preserved bytes, not IEEE comparison semantics.
    pub fn identical(&self, other: &Self) -> bool {
        let f = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.engine == other.engine
            && f(self.r, other.r)
            && f(self.q_target, other.q_target)
            && f(self.q_measured, other.q_measured)
            && f(self.tau, other.tau)
            && f(self.delta_phi, other.delta_phi)
            && f(self.delta_phi_se, other.delta_phi_se)
            && f(self.delta_phi_atoms_only, other.delta_phi_atoms_only)
            && f(self.qcrb, other.qcrb)
            && f(self.qcrb_se, other.qcrb_se)
            && self.n_traj == other.n_traj
            && self.n_diverged == other.n_diverged
            && f(self.wall_time, other.wall_time)
            && self.flags == other.flags
    }
}

/// Small builder for the plus-joined flag column.
pub struct Flags(Vec<String>);

impl Flags {
    pub fn new() -> Self {
        Flags(Vec::new())
    }

    pub fn from_joined(s: &str) -> Self {
        Flags(s.split('+').filter(|t| !t.is_empty()).map(String::from).collect())
    }

    pub fn push(&mut self, token: &str) {
        if !self.0.iter().any(|t| t == token) {
            self.0.push(token.to_string());
        }
    }

    pub fn finish(self) -> String {
        self.0.join("+")
    }
}

impl Default for Flags {
    fn default() -> Self {
        Self::new()
    }
}

/// Stable short codes for the flag column; the full message goes to stderr.
pub fn error_code(err: &CoreError) -> &'static str {
    match err {
        CoreError::DegenerateInput(_) => "degenerate_input",
        CoreError::DepletedRegime { .. } => "depleted_regime",
        CoreError::ZeroSlope => "zero_slope",
        CoreError::InvalidQ(_) => "invalid_q",
        CoreError::SeriesUndefined => "series_undefined",
        CoreError::InsufficientEnsemble(_) => "insufficient_ensemble",
        CoreError::NegativeVariance { .. } => "negative_variance",
        CoreError::NonPositiveFisher(_) => "nonpositive_fisher",
        CoreError::UnusableEnsemble { .. } => "unusable_ensemble",
        CoreError::UnreachableQ { .. } => "unreachable_q",
        CoreError::CalibrationMiss { .. } => "calibration_miss",
        CoreError::MissingCovariance(_) => "missing_covariance",
        CoreError::Config(_) => "config",
    }
}

/// Extra per-method flag tokens for analytic rows.
pub fn method_flag(method: Method) -> Option<&'static str> {
    match method {
        Method::Tw | Method::Pp => None,
        Method::AnalyticBs | Method::AnalyticSmallQ => Some("analytic"),
    }
}

/// Output metadata: the resolved configuration plus derived scalars, so a
/// result file can be interpreted without the invocation that made it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub build_version: String,
    pub config: ExperimentConfig,
    /// Named reference scalars (standard quantum limit, power-law floors).
    pub references: BTreeMap<String, f64>,
    /// Total run wall time in seconds; 0 unless timings were requested.
    pub wall_time: f64,
}

impl Meta {
    pub fn new(config: &ExperimentConfig, references: BTreeMap<String, f64>, wall_time: f64) -> Self {
        Meta {
            schema_version: config.schema_version,
            build_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            references,
            wall_time,
        }
    }
}

/// JSON document shape: metadata first, then the row array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepDocument {
    pub meta: Meta,
    pub rows: Vec<SweepRow>,
}

pub fn write_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)
            .map_err(|e| HarnessError::Config(format!("csv serialization: {e}")))?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: "<csv output>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(|e| HarnessError::Config(format!("csv parse: {e}")))
}

pub fn write_json<W: Write>(writer: W, doc: &SweepDocument) -> Result<()> {
    serde_json::to_writer_pretty(writer, doc)
        .map_err(|e| HarnessError::Config(format!("json serialization: {e}")))
}

pub fn read_json<R: Read>(reader: R) -> Result<SweepDocument> {
    serde_json::from_reader(reader).map_err(|e| HarnessError::Config(format!("json parse: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> SweepRow {
        SweepRow {
            engine: "tw".into(),
            r: 2.0,
            q_target: 0.5,
            q_measured: 0.4999,
            tau: 7.85e-3,
            delta_phi: 1.4e-3,
            delta_phi_se: 2.0e-5,
            delta_phi_atoms_only: 2.7e-3,
            qcrb: 9.0e-4,
            qcrb_se: 1.0e-5,
            n_traj: 50_000,
            n_diverged: 0,
            wall_time: 0.0,
            flags: String::new(),
        }
    }

    #[test]
    fn csv_header_matches_struct_fields() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[sample_row()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn csv_round_trips_exactly() {
        let rows = vec![
            sample_row(),
            SweepRow::failed("pp", 3.0, 0.97, &CoreError::ZeroSlope),
            SweepRow::reference("nt_pow_neg34", 1.0e-3),
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert!(a.identical(b), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn flags_join_and_query() {
        let row = sample_row().with_flag("min_over_r").with_flag("objective:qcrb");
        assert_eq!(row.flags, "min_over_r+objective:qcrb");
        assert!(row.has_flag("min_over_r"));
        assert!(!row.has_flag("objective"));
        // pushing a duplicate is a no-op
        let row = row.with_flag("min_over_r");
        assert_eq!(row.flags, "min_over_r+objective:qcrb");
    }

    #[test]
    fn failed_rows_carry_the_error_code() {
        let row = SweepRow::failed(
            "tw",
            6.31,
            0.9,
            &CoreError::UnreachableQ {
                q_target: 0.9,
                q_max: 0.13,
            },
        );
        assert!(row.has_flag("error:unreachable_q"));
        assert!(row.delta_phi.is_nan());
    }

    #[test]
    fn json_document_round_trips() {
        use crate::config::{Experiment, ExperimentConfig};
        let config = ExperimentConfig::defaults(Experiment::SinglePoint);
        let mut refs = BTreeMap::new();
        refs.insert("sql".to_string(), 1.0e-2);
        let doc = SweepDocument {
            meta: Meta::new(&config, refs, 0.0),
            rows: vec![sample_row()],
        };
        let mut buf = Vec::new();
        write_json(&mut buf, &doc).unwrap();
        let back = read_json(buf.as_slice()).unwrap();
        assert_eq!(back.meta.config, config);
        assert_eq!(back.meta.references["sql"], 1.0e-2);
        assert!(back.rows[0].identical(&doc.rows[0]));
    }
}
