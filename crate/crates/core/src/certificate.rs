//! Run log CSV, certificate JSON, and the independent recheck of a certificate
//! against the logged schedule values.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::solver::{quality_residual, Certificate, IterRecord, RunLog, TerminationValues};

pub const CERTIFICATE_SCHEMA: &str = "prox-adc-certificate/v1";

pub const CSV_COLUMNS: [&str; 18] = [
    "outer_k",
    "inner_i",
    "total_inner",
    "objective_F",
    "objective_Fk",
    "surrogate",
    "step_norm",
    "max_constraint",
    "subproblem_gap",
    "multiplier_norm",
    "gamma_k",
    "eps_k",
    "delta_k",
    "wall_ms",
    "ell_k",
    "max_tail_k",
    "objective_Fk_anchor",
    "inner_stop",
];

/// Extra column appended after the fixed ones: the subproblem tolerance of the row.
pub const CSV_TOL_SUB: &str = "tol_sub";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("certificate JSON: {0}")]
    Json(String),
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn log_to_csv(log: &RunLog) -> String {
    let mut out = String::new();
    out.push_str(&CSV_COLUMNS.join(","));
    out.push(',');
    out.push_str(CSV_TOL_SUB);
    out.push('\n');
    for r in &log.records {
        let fields = [
            r.outer_k.to_string(),
            r.inner_i.to_string(),
            r.total_inner.to_string(),
            num(r.objective_f),
            num(r.objective_fk),
            num(r.surrogate),
            num(r.step_norm),
            num(r.max_constraint),
            num(r.subproblem_gap),
            num(r.multiplier_norm),
            num(r.gamma_k),
            num(r.eps_k),
            num(r.delta_k),
            num(r.wall_ms),
            num(r.ell_k),
            num(r.max_tail_k),
            num(r.objective_fk_anchor),
            u8::from(r.inner_stop).to_string(),
            num(r.tol_sub),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn log_from_csv(text: &str) -> Result<RunLog, CertificateError> {
    let mut lines = text.lines().enumerate();
    let expected = format!("{},{CSV_TOL_SUB}", CSV_COLUMNS.join(","));
    match lines.next() {
        Some((_, h)) if h == expected => {}
        _ => {
            return Err(CertificateError::Csv {
                line: 1,
                reason: "unexpected header".into(),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let err = |reason: String| CertificateError::Csv {
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != CSV_COLUMNS.len() + 1 {
            return Err(err(format!("{} fields", f.len())));
        }
        let int = |i: usize| f[i].parse::<usize>().map_err(|e| err(format!("{}: {e}", CSV_COLUMNS[i])));
        let flt = |i: usize| f[i].parse::<f64>().map_err(|e| err(format!("column {i}: {e}")));
        let stop = match f[17] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("inner_stop {other:?}"))),
        };
        records.push(IterRecord {
            outer_k: int(0)?,
            inner_i: int(1)?,
            total_inner: int(2)?,
            objective_f: flt(3)?,
            objective_fk: flt(4)?,
            surrogate: flt(5)?,
            step_norm: flt(6)?,
            max_constraint: flt(7)?,
            subproblem_gap: flt(8)?,
            multiplier_norm: flt(9)?,
            gamma_k: flt(10)?,
            eps_k: flt(11)?,
            delta_k: flt(12)?,
            wall_ms: flt(13)?,
            ell_k: flt(14)?,
            max_tail_k: flt(15)?,
            objective_fk_anchor: flt(16)?,
            inner_stop: stop,
            tol_sub: flt(18)?,
        });
    }
    Ok(RunLog { records })
}

/// A certificate bound to one exact log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub schema: String,
    pub certificate: Certificate,
    pub log_sha256: String,
    /// SHA-256 of the JSON of `(schema, certificate, log_sha256)`.
    pub digest: String,
}

fn digest_of(schema: &str, cert: &Certificate, log_sha256: &str) -> String {
    let body = serde_json::to_string(&(schema, cert, log_sha256)).expect("certificate serializes");
    sha256_hex(body.as_bytes())
}

impl CertificateFile {
    pub fn new(certificate: Certificate, log_csv: &str) -> Self {
        let log_sha256 = sha256_hex(log_csv.as_bytes());
        let digest = digest_of(CERTIFICATE_SCHEMA, &certificate, &log_sha256);
        Self {
            schema: CERTIFICATE_SCHEMA.to_string(),
            certificate,
            log_sha256,
            digest,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CertificateError> {
        serde_json::from_str(text).map_err(|e| CertificateError::Json(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

/// Rechecks a certificate against the exact log text it was issued for.
pub fn verify(file: &CertificateFile, log_csv: &str) -> VerifyReport {
    let mut checks = Vec::new();
    let mut push = |name: &'static str, ok: bool, detail: String| checks.push(Check { name, ok, detail });
    let cert = &file.certificate;

    push("schema", file.schema == CERTIFICATE_SCHEMA, file.schema.clone());
    let log_hash = sha256_hex(log_csv.as_bytes());
    push("log_sha256", log_hash == file.log_sha256, log_hash);
    let digest = digest_of(&file.schema, cert, &file.log_sha256);
    push("digest", digest == file.digest, digest);

    let log = match log_from_csv(log_csv) {
        Ok(log) => log,
        Err(e) => {
            push("log_parse", false, e.to_string());
            return VerifyReport { checks };
        }
    };
    let levels = log.completed_levels();
    let holds = |r: &IterRecord| TerminationValues::from_record(r, cert.lambda).holds(cert.eta_bar, cert.beta_bar);

    let at_k0 = levels.iter().find(|r| r.outer_k == cert.k0);
    push(
        "k0_completed",
        at_k0.is_some() && cert.k0 >= cert.k_bar,
        format!("k0 = {}, k_bar = {}", cert.k0, cert.k_bar),
    );
    let Some(rec) = at_k0 else {
        return VerifyReport { checks };
    };
    let values = TerminationValues::from_record(rec, cert.lambda);
    push(
        "termination_values",
        values == cert.termination,
        format!("{values:?}"),
    );
    push(
        "termination_holds",
        holds(rec),
        format!("eta_bar = {}, beta_bar = {}", cert.eta_bar, cert.beta_bar),
    );
    let earlier = levels
        .iter()
        .find(|r| r.outer_k >= cert.k_bar && r.outer_k < cert.k0 && holds(r));
    push(
        "k0_minimal",
        earlier.is_none(),
        earlier.map_or("no earlier level".into(), |r| format!("level {} already qualifies", r.outer_k)),
    );
    let last_row_is_k0 = log.records.last().is_some_and(|r| std::ptr::eq(r, *rec));
    push("k0_is_last", last_row_is_k0, "certified row ends the log".into());
    let d_hat = log.max_multiplier_norm(cert.k0);
    push("d_hat", d_hat == cert.d_hat_observed, format!("{d_hat:e}"));
    let quality = (quality_residual(cert.eta_bar, cert.m, d_hat), cert.beta_bar, cert.k_bar);
    push("quality", quality == cert.quality, format!("{quality:?}"));
    let same_f = rec.objective_f == cert.objective_f || (rec.objective_f.is_nan() && cert.objective_f.is_nan());
    push("objective_f", same_f, format!("{:e}", rec.objective_f));
    VerifyReport { checks }
}
