//! Scratch: inspect the quality of a claimed primal-infeasibility certificate.
use sosinv::frontend::parse_program;
use sosinv::linalg::max_eig_sym;
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
    let p = &lowered.problem;
    let sol = solve_with_hints(p, &SolverOptions::default(), &lowered.hints);
    eprintln!("status {:?} iters {}", sol.status, sol.iterations);
    let y = &sol.dual_vector;
    let by: f64 = p.b.iter().zip(y).map(|(b, y)| b * y).sum();
    // assemble A^T y per block, dense
    let sizes: Vec<usize> = p.blocks.iter().map(|b| b.size).collect();
    let mut aty: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n * n]).collect();
    for (k, row) in p.rows.iter().enumerate() {
        for e in row {
            let n = sizes[e.block];
            aty[e.block][e.i * n + e.j] += e.value * y[k];
            if e.i != e.j {
                aty[e.block][e.j * n + e.i] += e.value * y[k];
            }
        }
    }
    let mut lmax = f64::NEG_INFINITY;
    let mut fro = 0.0f64;
    for (bi, &n) in sizes.iter().enumerate() {
        if n == 0 { continue; }
        lmax = lmax.max(max_eig_sym(&aty[bi], n));
        fro += aty[bi].iter().map(|v| v * v).sum::<f64>();
    }
    let fro = fro.sqrt();
    let ynorm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    eprintln!("b^T y = {by:.6e}   |y| = {ynorm:.3e}   |A^Ty|_F = {fro:.3e}");
    eprintln!("lmax(A^Ty) = {lmax:.6e}");
    if lmax > 0.0 {
        eprintln!("implied trace lower bound for any feasible X: {:.3e}", by / lmax);
    } else {
        eprintln!("lmax <= 0: rigorous infeasibility certificate");
    }
}
