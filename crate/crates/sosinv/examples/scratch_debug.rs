//! Scratch: solver behavior on one lowered step with verbose tracing.
use sosinv::frontend::parse_program;
use sosinv::sdp::{solve_with_hints, SolverOptions};
use sosinv::sosbuild::{build, lower_to_sdp};

const SRC: &str = r#"
vars x1, x2;
init x1 in [0.9, 1.1], x2 in [0, 0.2];
property kappa = x1^2 + x2^2;
while (-1 <= 0) {
    if (x1^2 + x2^2 <= 1) {
        x1, x2 = x1^2 + x2^3, x1^3 + x2^2;
    } else {
        x1, x2 = 0.5*x1^3 + 0.4*x2^2, -0.6*x1^2 + 0.3*x2^2;
    }
}
"#;

fn main() {
    let m: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let prog = parse_program(SRC).unwrap();
    let sos = build(&prog.cpds, prog.property.as_ref().unwrap(), m).unwrap();
    let lowered = lower_to_sdp(&sos).unwrap();
    // row norm statistics
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for row in &lowered.problem.rows {
        let n: f64 = row.iter().map(|e| e.value * e.value).sum::<f64>().sqrt();
        lo = lo.min(n);
        hi = hi.max(n);
    }
    let bmax = lowered.problem.b.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
    eprintln!("rows {} row-norm range [{lo:.3e}, {hi:.3e}] |b|max {bmax:.3e}", lowered.problem.num_rows());
    let mut opts = SolverOptions::default();
    opts.verbose = true;
    let sol = solve_with_hints(&lowered.problem, &opts, &lowered.hints);
    eprintln!("status {:?} pobj {:.9} iters {}", sol.status, sol.pobj, sol.iterations);
}
