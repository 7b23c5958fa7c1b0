//! Scratch: examine which Gram coordinates the stalled iterate drives to zero.
use sosinv::frontend::parse_program;
use sosinv::sdp::{solve_with_hints, BlockData, SolverOptions};
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
    let m: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let prog = parse_program(SRC).unwrap();
    let sos = build(&prog.cpds, prog.property.as_ref().unwrap(), m).unwrap();
    let lowered = lower_to_sdp(&sos).unwrap();
    let mut opts = SolverOptions::default();
    opts.max_iters = 60;
    let sol = solve_with_hints(&lowered.problem, &opts, &lowered.hints);
    eprintln!("status {:?} iters {} pobj {:.6e}", sol.status, sol.iterations, sol.pobj);
    for (g, gb) in sos.gram_blocks.iter().enumerate() {
        let bi = lowered.gram_block_index[g];
        let BlockData::Dense { size, data } = &sol.primal_blocks[bi] else { continue };
        let n = *size;
        // max |diagonal| per basis-monomial degree
        let mut by_deg: Vec<f64> = Vec::new();
        for (a, mono) in gb.basis.iter().enumerate() {
            let d = mono.degree() as usize;
            if by_deg.len() <= d {
                by_deg.resize(d + 1, 0.0);
            }
            by_deg[d] = by_deg[d].max(data[a * n + a].abs());
        }
        let summary: Vec<String> = by_deg.iter().enumerate().map(|(d, v)| format!("{d}:{v:.1e}")).collect();
        eprintln!("{:28} diag-by-degree  {}", gb.role.label(), summary.join("  "));
    }
}
