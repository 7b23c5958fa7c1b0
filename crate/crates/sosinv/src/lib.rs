//! Sums-of-squares invariant synthesis for one-loop polynomial programs.
//!
//! A *conditioned polynomial discrete system* models a single loop whose body
//! branches over polynomial conditions: from an initial box the state evolves
//! under one of several polynomial update maps, selected by which condition
//! region currently holds.  This crate synthesizes polynomial template
//! invariants for such systems: a polynomial `p` and bound `w` such that
//! `p(x) <= w` holds on every reachable state, certified by explicit
//! sums-of-squares identities that can be re-checked independently of the
//! solver that produced them.
//!
//! Pipeline, bottom to top:
//!
//! * [`poly`] — sparse multivariate polynomial arithmetic.
//! * [`frontend`] — a small loop language, parsed and flattened into the
//!   structured system description consumed by everything else.
//! * [`sdp`] — a self-contained primal-dual interior-point solver for
//!   semidefinite programs, plus SDPA sparse-format import/export.
//! * [`sosbuild`] — encodes the invariant conditions of a system at a given
//!   template degree as one block-diagonal SDP.
//! * [`synth`] — runs the degree hierarchy and packages solutions as
//!   certificates.
//! * [`verify`] — simulation, independent certificate checking, randomized
//!   falsification, and sublevel-set plotting.
//! * [`cli`] — the command-line driver used by the `sosinv` binary.

pub mod cli;
pub mod frontend;
pub mod linalg;
pub mod poly;
pub mod sdp;
pub mod sosbuild;
pub mod synth;
pub mod verify;

/// Initialize the global worker pool, honoring the `SOSINV_THREADS` env var.
///
/// Call once near process start; later calls are no-ops.  When the variable is
/// unset or invalid the pool keeps rayon's default size.
pub fn init_thread_pool() {
    if let Ok(s) = std::env::var("SOSINV_THREADS") {
        if let Ok(n) = s.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
