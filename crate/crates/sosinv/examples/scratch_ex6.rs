//! Scratch driver: benchmark systems across hierarchy steps.
use sosinv::frontend::parse_program;
use sosinv::synth::{render_table, run_hierarchy, HierarchyOptions};

const EX6: &str = r#"
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

const EX9: &str = r#"
vars x1, x2;
init x1 in [0.5, 0.7], x2 in [0.5, 0.7];
property kappa = -x1^2 - x2^2 - x1 - x2 - 0.25 avoid;
while (-1 <= 0) {
    if (x1^2 + x2^2 <= 1) {
        x1, x2 = x1^2 + x2^3, x1^3 + x2^2;
    } else {
        x1, x2 = 0.5*x1^3 + 0.4*x2^2, -0.6*x1^2 + 0.3*x2^2;
    }
}
"#;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "ex6".into());
    let min: u32 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let max: u32 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let src = if which == "ex9" { EX9 } else { EX6 };
    let prog = parse_program(src).unwrap();
    let opts = HierarchyOptions {
        min_step: Some(min),
        max_step: max,
        stop_at_success: false,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let res = run_hierarchy(&prog.cpds, prog.property.as_ref().unwrap(), &opts).unwrap();
    let total = t0.elapsed().as_secs_f64();
    print!("{}", render_table(&res.records, true));
    println!("total time {total:.2}s");
    for r in &res.records {
        match &r.outcome {
            sosinv::synth::StepOutcome::Inconclusive { reason, stats } => {
                println!("m={}: {reason} (stats: {stats:?})", r.step);
            }
            sosinv::synth::StepOutcome::Certified(c) => {
                println!(
                    "m={}: w={:.6} gap={:.2e} pres={:.2e} dres={:.2e} iters={}",
                    r.step,
                    c.bound,
                    c.solver.relative_gap,
                    c.solver.primal_residual,
                    c.solver.dual_residual,
                    c.solver.iterations
                );
                // grid diagnostics on [-2,2]^2
                let p = &c.template;
                let n = 200usize;
                let mut max_box = f64::NEG_INFINITY; // over [-1.5,1.5]^2
                let mut min_disk = f64::INFINITY; // over disk c=(-0.5,-0.5) r=0.5
                for i in 0..=n {
                    for j in 0..=n {
                        let x = -2.0 + 4.0 * i as f64 / n as f64;
                        let y = -2.0 + 4.0 * j as f64 / n as f64;
                        let v = p.eval(&[x, y]);
                        if x.abs() <= 1.5 && y.abs() <= 1.5 && v > max_box {
                            max_box = v;
                        }
                        if (x + 0.5).powi(2) + (y + 0.5).powi(2) <= 0.25 && v < min_disk {
                            min_disk = v;
                        }
                    }
                }
                println!(
                    "    max p over box [-1.5,1.5]^2 = {max_box:.6e} (contained iff <= w), min p over disk = {min_disk:.6e} (disjoint iff > w)"
                );
            }
            _ => {}
        }
    }
}
