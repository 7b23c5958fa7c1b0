//! Template synthesis: solve the certificate program at one step, climb the
//! degree hierarchy, and package successful solves as checkable certificates.
//!
//! A step either *certifies*, is *infeasible* (the solver exhibits a dual
//! improving ray, so no certificate of this degree exists), or is
//! *inconclusive* (numerical trouble, iteration limit, or an instance too
//! large for the configured resource budget).  Climbing the hierarchy
//! tightens the bound: everything feasible at step `m` stays feasible at
//! `m+1`, so certified bounds are non-increasing in `m`.
//!
//! Certification authority rests with the independent checker, not with the
//! solver's own convergence report.  Whenever the solver returns a primal
//! iterate — converged, iteration-limited, or stopped by numerical
//! breakdown — a candidate certificate is extracted from it and re-checked
//! symbolically; only a candidate that passes is *certified*.  This matters
//! in both directions: some steps admit acceptable certificates only at
//! enormous Gram norms the iteration approaches without ever satisfying its
//! own stopping test, and a formally "optimal" iterate can still carry
//! residuals too large to trust.
//!
//! Certificates bind to their input by a SHA-256 hash of the canonical
//! structured rendering, so a verifier can refuse a certificate presented
//! with a different system.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::frontend::{write_structured, Cpds, Program, PropertyMode, SublevelProperty};
use crate::poly::{Monomial, Polynomial};
use crate::sdp::{self, BlockData, SdpSolution, SolveStatus, SolverOptions};
use crate::sosbuild::{self, BuildError, SosProgram};
use crate::verify::{self, VerifyOptions};

/// Solver outcome bookkeeping carried into certificates and reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverStats {
    pub status: String,
    pub iterations: usize,
    pub relative_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Scalar decision variables of the step (Gram triangles plus split
    /// scalars).
    pub scalar_vars: usize,
    /// Aggregated coefficient-matching rows.
    pub rows: usize,
    /// Total side length of the block-diagonal SDP variable.
    pub matrix_size: usize,
}

/// One sum-of-squares unknown as solved: its Gram matrix over an explicit
/// monomial basis.
#[derive(Clone, Debug)]
pub struct CertGram {
    pub label: String,
    /// Identity this block belongs to (index into the build order:
    /// initial bound, branches in order, property domination).
    pub identity: usize,
    /// `+1.0` multiplier terms, `-1.0` subtracted witnesses.
    pub sign: f64,
    pub multiplies: Option<Polynomial>,
    pub basis: Vec<Monomial>,
    /// Full symmetric matrix, row-major, side `basis.len()`.
    pub matrix: Vec<f64>,
}

impl CertGram {
    /// The polynomial `z(x)^T Q z(x)` this Gram matrix represents.
    pub fn polynomial(&self, dimension: usize) -> Polynomial {
        let n = self.basis.len();
        let mut acc = Polynomial::zero(dimension);
        for a in 0..n {
            for b in 0..n {
                let prod = self.basis[a].mul(&self.basis[b]);
                acc = acc.add(&Polynomial::monomial(dimension, prod, self.matrix[a * n + b]));
            }
        }
        acc
    }
}

/// A synthesized invariant certificate: the sublevel set `p(x) <= bound` is
/// inductive, contains every initial state, and `p` dominates the property
/// polynomial everywhere.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub dimension: usize,
    pub step: u32,
    pub bound: f64,
    pub template: Polynomial,
    pub kappa: Polynomial,
    pub mode: PropertyMode,
    pub grams: Vec<CertGram>,
    /// SHA-256 of the canonical structured rendering of the input.
    pub system_hash: String,
    pub solver: SolverStats,
    /// RFC 3339 creation time; omitted for byte-reproducible output.
    pub generated_at: Option<String>,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// Outcome of one hierarchy step.
#[derive(Clone, Debug)]
pub enum StepOutcome {
    Certified(Box<Certificate>),
    /// No certificate of this degree exists (solver found an improving ray).
    Infeasible { stats: SolverStats },
    /// Nothing can be concluded at this step.
    Inconclusive { reason: String, stats: Option<SolverStats> },
}

impl StepOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            StepOutcome::Certified(_) => "certified",
            StepOutcome::Infeasible { .. } => "infeasible",
            StepOutcome::Inconclusive { .. } => "inconclusive",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub solver: SolverOptions,
    /// Refuse instances whose aggregated row count exceeds this bound.
    pub max_rows: usize,
    /// Refuse instances with more scalar variables than this bound.
    pub max_scalar_vars: usize,
    /// Stamp certificates with the wall-clock creation time.
    pub timestamp: bool,
    /// Tolerances for the certification check applied to every candidate.
    pub verify: VerifyOptions,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            solver: SolverOptions::default(),
            max_rows: 6_000,
            max_scalar_vars: 2_000_000,
            timestamp: true,
            verify: VerifyOptions::default(),
        }
    }
}

/// Hash binding a certificate to its input system and property.
pub fn system_hash(c: &Cpds, prop: &SublevelProperty) -> String {
    let canonical = write_structured(&Program {
        cpds: c.clone(),
        property: Some(prop.clone()),
    });
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    hex::encode(h.finalize())
}

/// Sizes of the SDP actually handed to the solver, after the exact presolve;
/// these can be smaller than the closed-form sizes of the constructed program
/// (which the hierarchy report shows).
fn stats_from(sol: &SdpSolution, lowered: &sosbuild::SdpMapping) -> SolverStats {
    SolverStats {
        status: format!("{:?}", sol.status),
        iterations: sol.iterations,
        relative_gap: sol.gap,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        scalar_vars: lowered.problem.num_scalar_vars(),
        rows: lowered.problem.num_rows(),
        matrix_size: lowered.problem.total_side(),
    }
}

/// Solve the certificate program at step `m`.
pub fn synthesize_step(
    c: &Cpds,
    prop: &SublevelProperty,
    m: u32,
    opts: &SynthOptions,
) -> Result<StepOutcome, SynthError> {
    let sizes = sosbuild::predicted_sizes(c, prop, m)?;
    if sizes.rows > opts.max_rows || sizes.scalar_vars > opts.max_scalar_vars {
        return Ok(StepOutcome::Inconclusive {
            reason: format!(
                "step {m} is too large for the configured budget: {} rows (limit {}), {} scalar variables (limit {})",
                sizes.rows, opts.max_rows, sizes.scalar_vars, opts.max_scalar_vars
            ),
            stats: None,
        });
    }
    let sos = sosbuild::build(c, prop, m)?;
    let lowered = match sosbuild::lower_to_sdp(&sos) {
        Ok(l) => l,
        Err(unmatchable) => {
            // only possible when a required coefficient has no certificate term at all
            return Ok(StepOutcome::Infeasible {
                stats: SolverStats {
                    status: format!("Infeasible ({unmatchable})"),
                    iterations: 0,
                    relative_gap: 0.0,
                    primal_residual: 0.0,
                    dual_residual: 0.0,
                    scalar_vars: sos.num_scalar_vars(),
                    rows: 0,
                    matrix_size: sos.total_matrix_size(),
                },
            });
        }
    };
    let sol = sdp::solve_with_hints(&lowered.problem, &opts.solver, &lowered.hints);
    let stats = stats_from(&sol, &lowered);
    match sol.status {
        SolveStatus::PrimalInfeasible => Ok(StepOutcome::Infeasible { stats }),
        SolveStatus::DualInfeasible => Ok(StepOutcome::Inconclusive {
            reason: "solver reports an unbounded improving direction; the step cannot be trusted"
                .into(),
            stats: Some(stats),
        }),
        SolveStatus::Optimal | SolveStatus::IterationLimit | SolveStatus::NumericalFailure => {
            let solver_status = sol.status;
            let mut sol = sol;
            let cert = extract_certificate(c, prop, &sos, &lowered, &sol, stats.clone(), opts);
            let rep = match verify::check_certificate(&cert, c, prop, &opts.verify) {
                Ok(rep) if rep.verified => {
                    return Ok(StepOutcome::Certified(Box::new(cert)));
                }
                Ok(rep) => rep,
                Err(e) => {
                    return Ok(StepOutcome::Inconclusive {
                        reason: format!("candidate could not be checked: {e}"),
                        stats: Some(stats),
                    });
                }
            };
            // Second chance: project the iterate onto the acceptance region
            // itself — per-identity residual budgets as row slack, Grams on
            // the cone.  Half the budget leaves room for reconstruction
            // rounding on top of the projected point.
            let slack: Vec<f64> = lowered
                .row_monomials
                .iter()
                .map(|&(id, _)| 0.5 * opts.verify.cert_tol * rep.identities[id].scale.max(1.0))
                .collect();
            if !sdp::refine_primal(&lowered.problem, &mut sol, Some(&slack)) {
                return Ok(StepOutcome::Inconclusive {
                    reason: format!(
                        "candidate at solver status {solver_status:?} fails checking: {}",
                        render_failures(&rep)
                    ),
                    stats: Some(stats),
                });
            }
            let stats = stats_from(&sol, &lowered);
            let cert = extract_certificate(c, prop, &sos, &lowered, &sol, stats.clone(), opts);
            match verify::check_certificate(&cert, c, prop, &opts.verify) {
                Ok(rep) if rep.verified => Ok(StepOutcome::Certified(Box::new(cert))),
                Ok(rep) => Ok(StepOutcome::Inconclusive {
                    reason: format!(
                        "candidate at solver status {solver_status:?} fails checking even after projection onto the acceptance region: {}",
                        render_failures(&rep)
                    ),
                    stats: Some(stats),
                }),
                Err(e) => Ok(StepOutcome::Inconclusive {
                    reason: format!("refined candidate could not be checked: {e}"),
                    stats: Some(stats),
                }),
            }
        }
    }
}

/// One-line summary of everything a checking report rejects.
fn render_failures(rep: &verify::VerifyReport) -> String {
    let mut failures: Vec<String> = rep
        .identities
        .iter()
        .filter(|i| !i.passed)
        .map(|i| {
            format!("identity {} residual {:.3e} (scale {:.3e})", i.label, i.max_residual, i.scale)
        })
        .collect();
    failures.extend(rep.grams.iter().filter(|g| !g.passed).map(|g| {
        format!("gram {} min eig {:+.3e} (scale {:.3e})", g.label, g.min_eigenvalue, g.scale)
    }));
    if failures.is_empty() {
        "no individual line fails".into()
    } else {
        failures.join("; ")
    }
}

fn extract_certificate(
    c: &Cpds,
    prop: &SublevelProperty,
    sos: &SosProgram,
    lowered: &sosbuild::SdpMapping,
    sol: &SdpSolution,
    stats: SolverStats,
    opts: &SynthOptions,
) -> Certificate {
    // The lowering eliminated the template scalars via p = kappa + psi, so the
    // bound comes back out of the shifted objective and the template out of
    // the property witness Gram.
    let bound = sol.pobj + lowered.objective_shift;
    let psi_block = &sos.gram_blocks[lowered.psi_gram];
    let mut template = prop.kappa.clone();
    if let BlockData::Dense { size, data } = &sol.primal_blocks[lowered.gram_block_index[lowered.psi_gram]]
    {
        let n = *size;
        debug_assert_eq!(n, psi_block.basis.len());
        for a in 0..n {
            for b in 0..n {
                let v = data[a * n + b];
                if v != 0.0 {
                    let prod = psi_block.basis[a].mul(&psi_block.basis[b]);
                    template = template.add(&Polynomial::monomial(c.dimension, prod, v));
                }
            }
        }
    } else {
        unreachable!("Gram blocks are dense");
    }
    let grams = sos
        .gram_blocks
        .iter()
        .enumerate()
        .map(|(g, gb)| {
            let n = gb.basis.len();
            let mut matrix = match &sol.primal_blocks[lowered.gram_block_index[g]] {
                BlockData::Dense { size, data } => {
                    debug_assert_eq!(*size, n);
                    data.clone()
                }
                BlockData::Diag { .. } => unreachable!("Gram blocks are dense"),
            };
            // the iterate is symmetric only up to rounding, and the quadratic
            // form z^T G z only ever sees the symmetric part — store exactly
            // that, so checkers can treat asymmetry as tampering
            for a in 0..n {
                for b in (a + 1)..n {
                    let s = 0.5 * (matrix[a * n + b] + matrix[b * n + a]);
                    matrix[a * n + b] = s;
                    matrix[b * n + a] = s;
                }
            }
            CertGram {
                label: gb.role.label(),
                identity: gb.identity,
                sign: gb.sign,
                multiplies: gb.multiplies.clone(),
                basis: gb.basis.clone(),
                matrix,
            }
        })
        .collect();
    Certificate {
        dimension: c.dimension,
        step: sos.step,
        bound,
        template,
        kappa: prop.kappa.clone(),
        mode: prop.mode,
        grams,
        system_hash: system_hash(c, prop),
        solver: stats,
        generated_at: opts
            .timestamp
            .then(|| humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string()),
    }
}

/// Whether a certificate establishes its property mode: any finite bound for
/// the bounded mode, a strictly negative bound for avoidance.
pub fn establishes_property(cert: &Certificate) -> bool {
    match cert.mode {
        PropertyMode::Bounded => cert.bound.is_finite(),
        PropertyMode::Avoid => cert.bound < 0.0,
    }
}

/// Record of one attempted step in a hierarchy run.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: u32,
    pub outcome: StepOutcome,
    pub seconds: f64,
    /// Closed-form sizes of the constructed program (the report shows these;
    /// they are available even when the step was refused as too large).
    pub scalar_vars: usize,
    pub rows: usize,
    pub matrix_size: usize,
}

#[derive(Clone, Debug)]
pub struct HierarchyResult {
    pub records: Vec<StepRecord>,
    /// First certificate that establishes the property mode.
    pub certificate: Option<Certificate>,
}

#[derive(Clone, Debug)]
pub struct HierarchyOptions {
    /// Lowest step; defaults to the smallest step fitting the property
    /// polynomial.
    pub min_step: Option<u32>,
    pub max_step: u32,
    /// Stop climbing once a step establishes the property mode.
    pub stop_at_success: bool,
    pub synth: SynthOptions,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions {
            min_step: None,
            max_step: 5,
            stop_at_success: true,
            synth: SynthOptions::default(),
        }
    }
}

/// Climb the degree hierarchy, recording every attempted step.
pub fn run_hierarchy(
    c: &Cpds,
    prop: &SublevelProperty,
    opts: &HierarchyOptions,
) -> Result<HierarchyResult, SynthError> {
    let lowest = (prop.kappa.degree().div_ceil(2)).max(1);
    let min_step = opts.min_step.unwrap_or(lowest).max(lowest);
    let mut records = Vec::new();
    let mut certificate: Option<Certificate> = None;
    for m in min_step..=opts.max_step {
        let t0 = std::time::Instant::now();
        let outcome = synthesize_step(c, prop, m, &opts.synth)?;
        let seconds = t0.elapsed().as_secs_f64();
        let sizes = sosbuild::predicted_sizes(c, prop, m)?;
        let (scalar_vars, rows, matrix_size) = (sizes.scalar_vars, sizes.rows, sizes.matrix_size);
        let success = match &outcome {
            StepOutcome::Certified(cert) => {
                if establishes_property(cert) && certificate.is_none() {
                    certificate = Some(*cert.clone());
                    true
                } else {
                    false
                }
            }
            _ => false,
        };
        records.push(StepRecord { step: m, outcome, seconds, scalar_vars, rows, matrix_size });
        if success && opts.stop_at_success {
            break;
        }
    }
    Ok(HierarchyResult { records, certificate })
}

/// Render the per-step report table: step, outcome, bound, problem sizes,
/// and wall time (suppressed to `-` when `show_time` is off so output stays
/// byte-reproducible).
pub fn render_table(records: &[StepRecord], show_time: bool) -> String {
    let mut rows = vec![[
        "m".to_string(),
        "outcome".to_string(),
        "bound w".to_string(),
        "Nb vars".to_string(),
        "Mat size".to_string(),
        "Time (s)".to_string(),
    ]];
    for r in records {
        let (outcome, bound) = match &r.outcome {
            StepOutcome::Certified(c) => ("certified".to_string(), format!("{:.6}", c.bound)),
            StepOutcome::Infeasible { .. } => ("infeasible".to_string(), "-".to_string()),
            StepOutcome::Inconclusive { .. } => ("inconclusive".to_string(), "-".to_string()),
        };
        let time = if show_time { format!("{:.2}", r.seconds) } else { "-".to_string() };
        rows.push([
            r.step.to_string(),
            outcome,
            bound,
            r.scalar_vars.to_string(),
            r.matrix_size.to_string(),
            time,
        ]);
    }
    let mut widths = [0usize; 6];
    for row in &rows {
        for (k, cell) in row.iter().enumerate() {
            widths[k] = widths[k].max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> =
            row.iter().enumerate().map(|(k, cell)| format!("{:>w$}", cell, w = widths[k])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Certificate (de)serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CertGramDoc {
    label: String,
    identity: usize,
    sign: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    multiplies: Option<String>,
    basis: Vec<Vec<u32>>,
    matrix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CertificateDoc {
    dimension: usize,
    step: u32,
    bound: f64,
    template: String,
    kappa: String,
    mode: PropertyMode,
    system_hash: String,
    solver: SolverStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
    grams: Vec<CertGramDoc>,
}

/// Serialize a certificate to its JSON file form.  Floats use the shortest
/// decimal that parses back to the same bits, so write/read is lossless.
pub fn write_certificate(cert: &Certificate) -> String {
    let doc = CertificateDoc {
        dimension: cert.dimension,
        step: cert.step,
        bound: cert.bound,
        template: cert.template.to_string(),
        kappa: cert.kappa.to_string(),
        mode: cert.mode,
        system_hash: cert.system_hash.clone(),
        solver: cert.solver.clone(),
        generated_at: cert.generated_at.clone(),
        grams: cert
            .grams
            .iter()
            .map(|g| CertGramDoc {
                label: g.label.clone(),
                identity: g.identity,
                sign: g.sign,
                multiplies: g.multiplies.as_ref().map(|p| p.to_string()),
                basis: g.basis.iter().map(|m| m.exponents.clone()).collect(),
                matrix: g.matrix.clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("serialization cannot fail");
    s.push('\n');
    s
}

#[derive(Debug, Error)]
pub enum CertificateParseError {
    #[error("certificate JSON: {0}")]
    Json(String),
    #[error("certificate: {0}")]
    Malformed(String),
}

pub fn parse_certificate(text: &str) -> Result<Certificate, CertificateParseError> {
    let doc: CertificateDoc =
        serde_json::from_str(text).map_err(|e| CertificateParseError::Json(e.to_string()))?;
    let d = doc.dimension;
    let parse_poly = |s: &str, what: &str| {
        Polynomial::parse(s, d)
            .map_err(|e| CertificateParseError::Malformed(format!("{what} `{s}`: {e}")))
    };
    let grams = doc
        .grams
        .into_iter()
        .map(|g| {
            let n = g.basis.len();
            if g.matrix.len() != n * n {
                return Err(CertificateParseError::Malformed(format!(
                    "gram `{}`: matrix has {} entries for basis size {n}",
                    g.label,
                    g.matrix.len()
                )));
            }
            for e in &g.basis {
                if e.len() != d {
                    return Err(CertificateParseError::Malformed(format!(
                        "gram `{}`: basis exponent arity {} != dimension {d}",
                        g.label,
                        e.len()
                    )));
                }
            }
            Ok(CertGram {
                label: g.label,
                identity: g.identity,
                sign: g.sign,
                multiplies: g
                    .multiplies
                    .as_deref()
                    .map(|s| parse_poly(s, "multiplier"))
                    .transpose()?,
                basis: g.basis.into_iter().map(Monomial::new).collect(),
                matrix: g.matrix,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Certificate {
        dimension: d,
        step: doc.step,
        bound: doc.bound,
        template: parse_poly(&doc.template, "template")?,
        kappa: parse_poly(&doc.kappa, "kappa")?,
        mode: doc.mode,
        grams,
        system_hash: doc.system_hash,
        solver: doc.solver,
        generated_at: doc.generated_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_program, Branch, ConstraintSet, InitRegion, Interval};

    /// Contraction toward the origin with a unit-ball initial region: by
    /// symmetry the optimal template is the squared norm itself and the
    /// optimal bound is its maximum over the ball, exactly 1.
    fn ball_contraction() -> (Cpds, SublevelProperty) {
        let d = 2;
        let ball = Polynomial::parse("x1^2 + x2^2 - 1", d).unwrap();
        let c = Cpds {
            dimension: d,
            var_names: vec!["x1".into(), "x2".into()],
            init: InitRegion::SemiAlgebraic {
                constraints: ConstraintSet { strict: vec![], weak: vec![ball] },
                compact_attested: true,
                sample_box: vec![Interval { lo: -1.0, hi: 1.0 }, Interval { lo: -1.0, hi: 1.0 }],
            },
            loop_guard: ConstraintSet::whole_space(),
            branches: vec![Branch {
                guard: ConstraintSet::whole_space(),
                update: vec![
                    Polynomial::parse("0.5*x1", d).unwrap(),
                    Polynomial::parse("0.5*x2", d).unwrap(),
                ],
            }],
        };
        let prop = SublevelProperty {
            kappa: Polynomial::parse("x1^2 + x2^2", d).unwrap(),
            mode: PropertyMode::Bounded,
        };
        (c, prop)
    }

    #[test]
    fn ball_contraction_reaches_the_analytic_bound() {
        let (c, prop) = ball_contraction();
        let out = synthesize_step(&c, &prop, 1, &SynthOptions::default()).unwrap();
        match out {
            StepOutcome::Certified(cert) => {
                assert!(
                    (cert.bound - 1.0).abs() <= 1e-5,
                    "bound {} should match the analytic optimum 1",
                    cert.bound
                );
                assert_eq!(cert.step, 1);
                assert_eq!(cert.dimension, 2);
                // the template dominates kappa on a sample of points
                for pt in [[0.3, -0.7], [1.5, 0.2], [-2.0, 1.0], [0.0, 0.0]] {
                    let p = cert.template.eval(&pt);
                    let k = cert.kappa.eval(&pt);
                    assert!(p >= k - 1e-6, "template {p} must dominate kappa {k} at {pt:?}");
                }
            }
            other => panic!("expected a certificate, got {}", other.label()),
        }
    }

    #[test]
    fn oversized_steps_are_refused_not_attempted() {
        let (c, prop) = ball_contraction();
        let mut opts = SynthOptions::default();
        opts.max_rows = 10;
        let out = synthesize_step(&c, &prop, 1, &opts).unwrap();
        match out {
            StepOutcome::Inconclusive { reason, stats } => {
                assert!(reason.contains("too large"), "{reason}");
                assert!(stats.is_none(), "refused steps must not report solver stats");
            }
            other => panic!("expected refusal, got {}", other.label()),
        }
    }

    #[test]
    fn certificate_json_round_trips_bit_exactly() {
        let (c, prop) = ball_contraction();
        let mut opts = SynthOptions::default();
        opts.timestamp = false;
        let out = synthesize_step(&c, &prop, 1, &opts).unwrap();
        let cert = match out {
            StepOutcome::Certified(cert) => *cert,
            other => panic!("expected a certificate, got {}", other.label()),
        };
        let json = write_certificate(&cert);
        let back = parse_certificate(&json).unwrap();
        assert_eq!(write_certificate(&back), json, "serialize ∘ parse must be the identity");
        assert_eq!(back.bound.to_bits(), cert.bound.to_bits());
        assert_eq!(back.template, cert.template);
        assert!(back.generated_at.is_none());
        assert_eq!(back.system_hash, system_hash(&c, &prop));
    }

    #[test]
    fn hash_binds_to_the_exact_system() {
        let (c, prop) = ball_contraction();
        let h1 = system_hash(&c, &prop);
        let mut c2 = c.clone();
        c2.branches[0].update[0] = Polynomial::parse("0.51*x1", 2).unwrap();
        assert_ne!(h1, system_hash(&c2, &prop), "different systems must hash differently");
        let mut prop2 = prop.clone();
        prop2.mode = PropertyMode::Avoid;
        assert_ne!(h1, system_hash(&c, &prop2), "the property mode is part of the binding");
        assert_eq!(h1, system_hash(&c.clone(), &prop.clone()), "hashing is deterministic");
    }

    #[test]
    fn avoidance_requires_a_negative_bound() {
        let (c, prop) = ball_contraction();
        // the reach set stays inside the unit ball; the unit ball around
        // (10, 0) is never hit, and 1 - (x1-10)^2 - x2^2 is negative on the
        // whole reach set
        let avoid = SublevelProperty {
            kappa: Polynomial::parse("-x1^2 - x2^2 + 20*x1 - 99", 2).unwrap(),
            mode: PropertyMode::Avoid,
        };
        let res = run_hierarchy(&c, &avoid, &HierarchyOptions::default()).unwrap();
        let cert = res.certificate.expect("a far-away region must be avoidable");
        assert!(cert.bound < 0.0, "avoidance bound {} must be negative", cert.bound);
        assert!(establishes_property(&cert));
        // bounded mode on the same data accepts any finite bound
        assert!(matches!(prop.mode, PropertyMode::Bounded));
    }

    #[test]
    fn hierarchy_records_every_step_and_certified_bounds_shrink() {
        let (c, prop) = ball_contraction();
        let opts = HierarchyOptions {
            min_step: Some(1),
            max_step: 2,
            stop_at_success: false,
            ..Default::default()
        };
        let res = run_hierarchy(&c, &prop, &opts).unwrap();
        assert_eq!(res.records.len(), 2, "every step in range must be recorded");
        let bounds: Vec<f64> = res
            .records
            .iter()
            .filter_map(|r| match &r.outcome {
                StepOutcome::Certified(cert) => Some(cert.bound),
                _ => None,
            })
            .collect();
        assert!(!bounds.is_empty());
        for w in bounds.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-6,
                "bounds must not grow with the step: {} then {}",
                w[0],
                w[1]
            );
        }
        let table = render_table(&res.records, false);
        assert!(table.contains("Nb vars"), "{table}");
        assert!(table.contains("Mat size"));
        assert!(!table.contains("NaN"));
        for line in table.lines().skip(2) {
            assert!(line.trim_end().ends_with('-'), "time column must be suppressed: {line}");
        }
    }

    #[test]
    fn min_step_clamps_to_the_property_degree() {
        let src = "vars x1;\ninit x1 in [0, 1];\nproperty kappa = x1^4;\nwhile (-1 <= 0) { x1 = 0.5*x1; }";
        let prog = parse_program(src).unwrap();
        let opts = HierarchyOptions {
            min_step: Some(1),
            max_step: 2,
            stop_at_success: true,
            ..Default::default()
        };
        let res = run_hierarchy(&prog.cpds, prog.property.as_ref().unwrap(), &opts).unwrap();
        assert!(res.records.iter().all(|r| r.step >= 2), "degree-4 property needs m >= 2");
    }
}
