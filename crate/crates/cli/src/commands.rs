use std::sync::Arc;

use anyhow::anyhow;
use otstab_core::constructions::{CellInstanceDocument, ConstantsProvenance, Validation};
use otstab_core::mc::derive_seed;
use otstab_core::sdot::{compare_to_oracle, solve_sdot};
use otstab_core::stability::{find_witness, fit_holder, sweep, WitnessSearch};
use otstab_core::transport_maps::{closest_point_certificate, pushforward_check, CertificateReport, PushforwardReport};
use otstab_core::{AgreementReport, CellOracle, Error, Family, HolderFit, PerturbedOracle, RotatingOracle, StabilityRecord, TargetFamily, TargetKind, TransportMap, Witness};
use serde::Serialize;

use crate::config::{needs_fit, Resolved, WitnessConfig};
use crate::output::{Header, Outputs, SCHEMA_VERSION};
use crate::Failure;

/// Result of a command that ran to completion; `failure` marks a numerical check that did not pass.
pub struct Outcome {
    pub outputs: Outputs,
    pub summary: Vec<String>,
    pub failure: Option<String>,
}

fn header(r: &Resolved, command: &'static str) -> Header {
    Header { schema_version: SCHEMA_VERSION, command, config_sha256: r.config_sha256.clone(), seed: r.config.seed, instance_sha256: r.instance_sha256.clone() }
}

fn file_name(command: &str, family: Family, ext: &str) -> String {
    format!("{command}-{family}.{ext}")
}

fn oracle_for_angle(r: &Resolved, theta: f64) -> Result<RotatingOracle, Failure> {
    Ok(RotatingOracle::new(theta, r.experiment.radius(), r.experiment.dim())?)
}

#[derive(Serialize)]
struct CheckEntry {
    map: String,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<CertificateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pushforward: Option<PushforwardReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    #[serde(flatten)]
    header: Header,
    family: Family,
    checks: Vec<CheckEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sdot: Option<&'a SdotReport>,
    all_passed: bool,
}

/// Certificate or pushforward failures are recorded in the report; any other error aborts.
fn run_check<T>(result: otstab_core::Result<T>) -> Result<Result<T, String>, Failure> {
    match result {
        Ok(v) => Ok(Ok(v)),
        Err(e @ (Error::Certificate { .. } | Error::Pushforward { .. })) => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

pub fn verify_maps(r: &Resolved) -> Result<Outcome, Failure> {
    let mut maps: Vec<(String, Box<dyn TransportMap>)> = Vec::new();
    match r.instance() {
        Some(inst) => {
            maps.push(("cell".into(), Box::new(CellOracle::new(inst.clone()))));
            for &t in &r.grid {
                let i = t as usize;
                maps.push((format!("perturbed(i={i})"), Box::new(PerturbedOracle::new(inst.clone(), i)?)));
            }
        }
        None => {
            for theta in std::iter::once(0.0).chain(r.grid.iter().copied()) {
                maps.push((format!("rotating(theta={theta})"), Box::new(oracle_for_angle(r, theta)?)));
            }
        }
    }
    let density = r.experiment.density();
    let n = r.config.certificate_samples;
    let mut checks = Vec::with_capacity(maps.len());
    for (k, (label, map)) in maps.iter().enumerate() {
        let cert = run_check(closest_point_certificate(map.as_ref(), density, n, derive_seed(r.config.seed, 2 * k as u64)))?;
        let push = run_check(pushforward_check(map.as_ref(), density, n, derive_seed(r.config.seed, 2 * k as u64 + 1)))?;
        let error = [cert.as_ref().err(), push.as_ref().err()].into_iter().flatten().cloned().collect::<Vec<_>>();
        checks.push(CheckEntry {
            map: label.clone(),
            passed: error.is_empty(),
            certificate: cert.ok(),
            pushforward: push.ok(),
            error: if error.is_empty() { None } else { Some(error.join("; ")) },
        });
    }
    let sdot = if r.config.sdot.verify { Some(run_sdot(r)?) } else { None };
    let failed: Vec<&CheckEntry> = checks.iter().filter(|c| !c.passed).collect();
    let mut failure = failed.first().map(|c| format!("{} check(s) failed; first: {}: {}", failed.len(), c.map, c.error.as_deref().unwrap_or("")));
    if let Some(s) = &sdot {
        if !s.passed && failure.is_none() {
            failure = Some(s.failure_message());
        }
    }
    let mut summary = vec![format!("verify-maps: {} of {} oracle checks passed with {n} samples each", checks.len() - failed.len(), checks.len())];
    if let Some(s) = &sdot {
        summary.push(s.summary_line());
    }
    let report = VerifyReport { header: header(r, "verify-maps"), family: r.family(), all_passed: failure.is_none(), checks, sdot: sdot.as_ref() };
    let mut outputs = Outputs::default();
    outputs.json(file_name("verify-maps", r.family(), "json"), &report)?;
    Ok(Outcome { outputs, summary, failure })
}

#[derive(Serialize)]
struct BoundChecks {
    checked: usize,
    held: usize,
    all_hold: bool,
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    #[serde(flatten)]
    header: Header,
    family: Family,
    p: f64,
    alphas: &'a [f64],
    records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<HolderFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_error: Option<String>,
    bound_checks: BoundChecks,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness_error: Option<String>,
}

pub const SWEEP_COLUMNS: [&str; 14] = [
    "family",
    "parameter",
    "p",
    "w_p",
    "w_p_se",
    "l2",
    "l2_se",
    "l2_sq",
    "l2_sq_se",
    "method",
    "reference",
    "reference_value",
    "bound_holds",
    "seed",
];

fn sweep_csv(h: &Header, alphas: &[f64], records: &[StabilityRecord]) -> anyhow::Result<Vec<u8>> {
    let mut buf = h.comment_line("sweep").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let (head, tail) = SWEEP_COLUMNS.split_at(SWEEP_COLUMNS.len() - 1);
        let mut columns: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        columns.extend(alphas.iter().map(|a| format!("ratio@{a}")));
        columns.extend(tail.iter().map(|s| s.to_string()));
        w.write_record(&columns)?;
        for rec in records {
            let mut row = vec![
                rec.family.to_string(),
                rec.parameter.to_string(),
                rec.p.to_string(),
                rec.w_p.value.to_string(),
                rec.w_p.se.to_string(),
                rec.l2.value.to_string(),
                rec.l2.se.to_string(),
                rec.l2_sq.value.to_string(),
                rec.l2_sq.se.to_string(),
                rec.l2_sq.method.tag(),
            ];
            match &rec.reference {
                Some(reference) => {
                    row.push(serde_json::to_value(reference.kind)?.as_str().unwrap_or_default().to_string());
                    row.push(reference.value.to_string());
                    row.push(reference.holds.to_string());
                }
                None => row.extend([String::new(), String::new(), String::new()]),
            }
            row.extend(alphas.iter().map(|&a| rec.ratio(a).map(|v| v.to_string()).unwrap_or_default()));
            row.push(rec.seed.map(|s| s.to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn witness_search(r: &Resolved, w: &WitnessConfig) -> otstab_core::Result<Witness> {
    let p = w.p.unwrap_or(r.config.p);
    find_witness(&r.experiment, w.c, w.alpha, p, WitnessSearch { samples: r.config.samples, seed: r.config.seed })
}

pub fn sweep_cmd(r: &Resolved) -> Result<Outcome, Failure> {
    let alphas = &r.config.alphas;
    let records = sweep(&r.experiment, &r.grid, r.config.p, alphas, r.budget, r.config.seed)?;
    let (fit, fit_error) = if needs_fit(&r.grid) {
        match fit_holder(&records) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some(format!("{} grid points are too few for a fit", r.grid.len())))
    };
    let (witness, witness_error) = match &r.config.witness {
        Some(w) => match witness_search(r, w) {
            Ok(found) => (Some(found), None),
            Err(e @ Error::WitnessNotFound(_)) => (None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        },
        None => (None, None),
    };
    let checked = records.iter().filter(|rec| rec.reference.is_some()).count();
    let held = records.iter().filter(|rec| rec.reference.is_some_and(|x| x.holds)).count();
    let h = header(r, "sweep");
    let csv = sweep_csv(&h, alphas, &records)?;
    let mut summary = vec![format!("sweep: {} records for the {} family; bound checks held {held}/{checked}", records.len(), r.family())];
    if let Some(f) = &fit {
        summary.push(format!("fit: slope {:.6} over {} points", f.slope, f.points));
    }
    if let Some(w) = &witness {
        summary.push(format!("witness: parameter {} with ratio {:.6e}", w.parameter, w.ratio));
    }
    let json = SweepSummary {
        header: h,
        family: r.family(),
        p: r.config.p,
        alphas,
        records: records.len(),
        fit,
        fit_error,
        bound_checks: BoundChecks { checked, held, all_hold: held == checked },
        witness,
        witness_error,
    };
    let mut outputs = Outputs::default();
    outputs.raw(file_name("sweep", r.family(), "csv"), csv);
    outputs.json(file_name("sweep", r.family(), "json"), &json)?;
    Ok(Outcome { outputs, summary, failure: None })
}

#[derive(Serialize)]
struct WitnessReport {
    #[serde(flatten)]
    header: Header,
    witness: Witness,
}

pub fn witness_cmd(r: &Resolved) -> Result<Outcome, Failure> {
    let w = r.config.witness.clone().unwrap_or(WitnessConfig { c: 1e3, alpha: 0.4, p: None });
    let found = witness_search(r, &w)?;
    let summary = vec![format!(
        "witness: {} family, C = {}, alpha = {}, p = {}: parameter {} with ratio {:.6e} ({:?})",
        r.family(),
        found.c,
        found.alpha,
        found.p,
        found.parameter,
        found.ratio,
        found.basis
    )];
    let mut outputs = Outputs::default();
    outputs.json(file_name("witness", r.family(), "json"), &WitnessReport { header: header(r, "witness"), witness: found })?;
    Ok(Outcome { outputs, summary, failure: None })
}

#[derive(Serialize)]
pub struct SdotReport {
    target: TargetKind,
    training_samples: usize,
    distinct_samples: usize,
    pivots: usize,
    cost: f64,
    psi: Vec<f64>,
    min_agreement: f64,
    passed: bool,
    agreement: AgreementReport,
}

impl SdotReport {
    fn summary_line(&self) -> String {
        format!(
            "solve-sdot: agreement {:.6} (SE {:.2e}) on {} validation samples, {} interior disagreements",
            self.agreement.agreement.value, self.agreement.agreement.se, self.agreement.samples, self.agreement.interior
        )
    }

    fn failure_message(&self) -> String {
        format!(
            "semi-discrete map agrees with the oracle on {:.6} of samples (required {}) with {} interior disagreements",
            self.agreement.agreement.value, self.min_agreement, self.agreement.interior
        )
    }
}

fn run_sdot(r: &Resolved) -> Result<SdotReport, Failure> {
    let cfg = &r.config.sdot;
    let density = r.experiment.density();
    let (target, oracle): (TargetFamily, Box<dyn TransportMap>) = match r.instance() {
        Some(inst) => match cfg.index {
            Some(i) => (TargetFamily::perturbed(inst, i)?, Box::new(PerturbedOracle::new(Arc::clone(inst), i)?)),
            None => (TargetFamily::cell_atoms(inst), Box::new(CellOracle::new(Arc::clone(inst)))),
        },
        None => (TargetFamily::rotating(cfg.theta, r.experiment.radius(), r.experiment.dim())?, Box::new(oracle_for_angle(r, cfg.theta)?)),
    };
    let sol = solve_sdot(density, &target, cfg.training_samples, r.config.seed)?;
    let agreement = compare_to_oracle(&sol, oracle.as_ref(), density, cfg.validation_samples, derive_seed(r.config.seed, 1))?;
    Ok(SdotReport {
        target: target.kind,
        training_samples: sol.training_samples,
        distinct_samples: sol.distinct_samples,
        pivots: sol.pivots,
        cost: sol.cost,
        psi: sol.weights.psi.clone(),
        min_agreement: cfg.min_agreement,
        passed: agreement.passes(cfg.min_agreement),
        agreement,
    })
}

#[derive(Serialize)]
struct SdotFile<'a> {
    #[serde(flatten)]
    header: Header,
    family: Family,
    #[serde(flatten)]
    report: &'a SdotReport,
}

pub fn solve_sdot_cmd(r: &Resolved) -> Result<Outcome, Failure> {
    let report = run_sdot(r)?;
    let failure = (!report.passed).then(|| report.failure_message());
    let summary = vec![report.summary_line()];
    let mut outputs = Outputs::default();
    outputs.json(file_name("solve-sdot", r.family(), "json"), &SdotFile { header: header(r, "solve-sdot"), family: r.family(), report: &report })?;
    Ok(Outcome { outputs, summary, failure })
}

#[derive(Serialize)]
struct InstanceReport {
    #[serde(flatten)]
    header: Header,
    cells: usize,
    constants: ConstantsProvenance,
    valid: bool,
    validation: Validation,
    instance: CellInstanceDocument,
}

pub fn validate_instance(r: &Resolved) -> Result<Outcome, Failure> {
    let inst = r.instance().ok_or_else(|| Failure::Config(anyhow!("validate-instance needs the cell family, got {}", r.family())))?;
    let validation = inst.validate();
    if let Some(first) = validation.violations().first() {
        return Err(Failure::Config(anyhow!("instance violates {} constraint(s); first: {first}", validation.violations().len())));
    }
    let summary = vec![format!("validate-instance: {} cells, all {} constraint checks hold", inst.n(), validation.reports.len())];
    let report = InstanceReport {
        header: header(r, "validate-instance"),
        cells: inst.n(),
        constants: inst.constants(),
        valid: true,
        validation,
        instance: inst.to_document(),
    };
    let mut outputs = Outputs::default();
    outputs.json(file_name("validate-instance", r.family(), "json"), &report)?;
    Ok(Outcome { outputs, summary, failure: None })
}
