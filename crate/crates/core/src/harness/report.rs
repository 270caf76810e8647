//! CSV and JSON rendering. Output is a pure function of the results and the
//! header, so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditions::ConditionReport;
use crate::error::{Error, Result};
use crate::harness::experiment::{DistTestResult, OracleSummary, StandardizedSample};
use crate::moments::MomentSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Provenance line written at the top of every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Conditions(&'a [ConditionReport]),
    DistTests(&'a [DistTestResult]),
    Samples(&'a [StandardizedSample]),
    Moments(&'a [MomentSet]),
    Oracle(&'a OracleSummary),
}

impl Report<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Report::Conditions(_) => "conditions",
            Report::DistTests(_) => "dist_tests",
            Report::Samples(_) => "samples",
            Report::Moments(_) => "moments",
            Report::Oracle(_) => "oracle",
        }
    }
}

#[derive(Serialize)]
struct JsonEnvelope<'a, T: Serialize> {
    kind: &'a str,
    config_hash: &'a str,
    seed: u64,
    data: T,
}

fn json<T: Serialize>(kind: &str, header: &ReportHeader, data: T) -> Result<String> {
    let env = JsonEnvelope {
        kind,
        config_hash: &header.config_hash,
        seed: header.seed,
        data,
    };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| Error::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn render(report: Report<'_>, format: OutputFormat, header: &ReportHeader) -> Result<String> {
    let kind = report.kind();
    match format {
        OutputFormat::Json => match report {
            Report::Conditions(r) => json(kind, header, r),
            Report::DistTests(r) => json(kind, header, r),
            Report::Samples(r) => json(kind, header, r),
            Report::Moments(r) => json(kind, header, r),
            Report::Oracle(r) => json(kind, header, r),
        },
        OutputFormat::Csv => {
            let mut out = format!("# config_hash={} seed={}\n", header.config_hash, header.seed);
            match report {
                Report::Conditions(r) => conditions_csv(&mut out, r),
                Report::DistTests(r) => dist_tests_csv(&mut out, r),
                Report::Samples(r) => samples_csv(&mut out, r),
                Report::Moments(r) => moments_csv(&mut out, r),
                Report::Oracle(r) => oracle_csv(&mut out, r),
            }
            Ok(out)
        }
    }
}

/// Writes the report to `path`, or to stdout when `path` is `None`.
pub fn emit_report(report: Report<'_>, format: OutputFormat, path: Option<&Path>, header: &ReportHeader) -> Result<()> {
    let text = render(report, format, header)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io {
            path: p.display().to_string(),
            source,
        }),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io {
                path: "<stdout>".to_string(),
                source,
            }),
    }
}

fn conditions_csv(out: &mut String, reports: &[ConditionReport]) {
    out.push_str("condition_id,n,eps,estimate,se,verdict\n");
    for r in reports {
        for (k, &n) in r.n_grid.iter().enumerate() {
            for e in 0..r.columns() {
                let eps = r.eps_grid.get(e).map(|v| v.to_string()).unwrap_or_default();
                let est = r.estimates[k][e];
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.condition_id, n, eps, est.value, est.se, r.verdicts[e]
                );
            }
        }
    }
}

fn dist_tests_csv(out: &mut String, results: &[DistTestResult]) {
    let mut notes: Vec<&str> = results.iter().filter_map(|r| r.note.as_deref()).collect();
    notes.dedup();
    for note in notes {
        let _ = writeln!(out, "# note: {note}");
    }
    out.push_str("n,p,replications,statistic,target,ks_statistic,threshold,decision,evaluations\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.p,
            r.replications,
            r.statistic,
            r.target.as_str(),
            r.ks_statistic,
            r.threshold,
            if r.pass { "pass" } else { "fail" },
            r.evaluations
        );
    }
}

fn samples_csv(out: &mut String, samples: &[StandardizedSample]) {
    out.push_str("n,p,replicate,value\n");
    for s in samples {
        for (i, v) in s.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", s.n, s.p, i, v);
        }
    }
}

fn moments_csv(out: &mut String, moments: &[MomentSet]) {
    out.push_str("n,p,beta2,gamma2,theta2,var_u_exact,se_beta2,se_gamma2,se_theta2,se_var_u_exact,provenance\n");
    for m in moments {
        let se = &m.standard_errors;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.n,
            m.p,
            m.beta2,
            m.gamma2,
            m.theta2,
            m.var_u_exact,
            se.beta2,
            se.gamma2,
            se.theta2,
            se.var_u_exact,
            m.provenance.as_str()
        );
    }
}

fn oracle_csv(out: &mut String, o: &OracleSummary) {
    out.push_str("quantity,enumerated,closed_form,abs_error\n");
    for q in &o.checks {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            q.quantity,
            q.enumerated,
            q.closed_form,
            (q.enumerated - q.closed_form).abs()
        );
    }
}
