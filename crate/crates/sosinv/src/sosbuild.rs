//! Assembly of the sum-of-squares certificate program for one relaxation step.
//!
//! Given the flattened loop system, the property polynomial `kappa`, and a
//! step `m`, we search for a template polynomial `p` of degree at most `2m`
//! and a bound `w` such that
//!
//! 1. *initial bound*: `w - p + Σ_j s_j·r_j = s_0` on the initial region
//!    (`r_j` its constraints, `s_j` sum-of-squares multipliers, `s_0` a
//!    sum-of-squares witness), so `p <= w` holds on every initial state;
//! 2. *per-branch decrease*: for every branch `i` with update `T_i`,
//!    `-p∘T_i + p + Σ_j u_j·g_j + Σ_j v_j·h_j = s_i` with `g_j` the branch
//!    guard rows, `h_j` the loop guard rows, and `u_j, v_j, s_i`
//!    sum-of-squares, so `p` cannot increase along any enabled step;
//! 3. *property domination*: `p - psi = kappa` with `psi` sum-of-squares, so
//!    `kappa <= p` everywhere.
//!
//! Together these make `{x | p(x) <= w}` an inductive invariant whose level
//!
//! bounds `kappa` on everything reachable.  Each sum-of-squares unknown
//! becomes a positive semidefinite Gram matrix over an explicit monomial
//! basis; matching coefficients monomial-by-monomial turns the three
//! identities into linear constraints, and minimizing `w` makes the level as
//! tight as the step allows.  Strict guard rows are relaxed to their closure,
//! which keeps every certificate sound.
//!
//! Degree budgets at step `m`, writing `t_i = max(1, deg T_i)`:
//! template and the identities over the state space live in degree `2m`;
//! branch identities live in degree `2m·t_i`; each multiplier basis is cut so
//! that multiplier times constraint stays inside its identity's budget.

use std::collections::BTreeMap;
use std::collections::HashMap;

use thiserror::Error;

use crate::frontend::{Cpds, SublevelProperty};
use crate::poly::{basis_size, monomial_basis, Monomial, Polynomial};
use crate::sdp::{BlockSpec, MatEntry, SdpProblem, SolveHints};

/// What a Gram matrix stands for in the certificate.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GramRole {
    /// Witness `s_0` for the initial-bound identity.
    InitWitness,
    /// Multiplier `s_j` on initial-region constraint `constraint`.
    InitMultiplier { constraint: usize },
    /// Witness `s_i` for branch `branch`'s decrease identity.
    BranchWitness { branch: usize },
    /// Multiplier on branch `branch`'s guard constraint `constraint`.
    BranchMultiplier { branch: usize, constraint: usize },
    /// Multiplier on the loop guard's constraint `constraint`, inside branch
    /// `branch`'s identity.
    LoopMultiplier { branch: usize, constraint: usize },
    /// Witness `psi` for the property-domination identity.
    PropertyWitness,
}

impl GramRole {
    pub fn label(&self) -> String {
        match self {
            GramRole::InitWitness => "init.witness".into(),
            GramRole::InitMultiplier { constraint } => format!("init.mult[{constraint}]"),
            GramRole::BranchWitness { branch } => format!("branch[{branch}].witness"),
            GramRole::BranchMultiplier { branch, constraint } => {
                format!("branch[{branch}].guard_mult[{constraint}]")
            }
            GramRole::LoopMultiplier { branch, constraint } => {
                format!("branch[{branch}].loop_mult[{constraint}]")
            }
            GramRole::PropertyWitness => "property.witness".into(),
        }
    }
}

/// One sum-of-squares unknown: a Gram matrix over `basis`, optionally
/// multiplied by a constraint polynomial, entering identity `identity` with
/// the given sign.
#[derive(Clone, Debug)]
pub struct GramBlock {
    pub role: GramRole,
    pub basis: Vec<Monomial>,
    /// Constraint polynomial this block multiplies (`None` for bare
    /// witnesses).
    pub multiplies: Option<Polynomial>,
    /// Index into [`SosProgram::identities`].
    pub identity: usize,
    /// `+1.0` for added multipliers, `-1.0` for the subtracted witness.
    pub sign: f64,
}

/// One polynomial identity: its row monomials (coefficients to match) and
/// degree budget.
#[derive(Clone, Debug)]
pub struct IdentityInfo {
    pub label: String,
    pub degree: u32,
    pub rows: Vec<Monomial>,
}

/// The symbolic certificate program at one step: unknowns, identities, and
/// the data they were built from.
#[derive(Clone, Debug)]
pub struct SosProgram {
    pub cpds: Cpds,
    pub property: SublevelProperty,
    pub step: u32,
    /// Monomial basis of the template `p` (every monomial of degree `<= 2m`).
    pub template_basis: Vec<Monomial>,
    pub gram_blocks: Vec<GramBlock>,
    pub identities: Vec<IdentityInfo>,
}

impl SosProgram {
    /// Equality rows of the reduced SDP: every identity monomial except the
    /// property identity (absorbed by the template substitution) and the
    /// initial identity's constant row (absorbed by the objective).
    pub fn num_rows(&self) -> usize {
        let nb = self.cpds.branches.len();
        self.identities[1..=nb].iter().map(|id| id.rows.len()).sum::<usize>()
            + self.identities[0].rows.len()
            - 1
    }

    /// Scalar decision variables of the reduced SDP: one per Gram
    /// upper-triangle entry (the bound and template coefficients are
    /// eliminated exactly during lowering).
    pub fn num_scalar_vars(&self) -> usize {
        self.gram_blocks
            .iter()
            .map(|g| {
                let s = g.basis.len();
                s * (s + 1) / 2
            })
            .sum()
    }

    /// Total side length of the block-diagonal SDP variable.
    pub fn total_matrix_size(&self) -> usize {
        self.gram_blocks.iter().map(|g| g.basis.len()).sum()
    }

    pub fn max_gram_size(&self) -> usize {
        self.gram_blocks.iter().map(|g| g.basis.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("step m={m} is too small: the template caps at degree {template_degree} but the property polynomial has degree {property_degree}; use m >= {required}")]
    StepTooSmall { m: u32, template_degree: u32, property_degree: u32, required: u32 },
    #[error("invalid system: {0}")]
    Invalid(String),
}

/// Largest multiplier half-degree such that multiplier · constraint stays
/// within `budget`; `None` when even a constant multiplier overshoots.
fn half_budget(budget: u32, constraint_degree: u32) -> Option<u32> {
    if constraint_degree > budget {
        None
    } else {
        Some((budget - constraint_degree) / 2)
    }
}

/// Build the symbolic certificate program at step `m`.
pub fn build(c: &Cpds, prop: &SublevelProperty, m: u32) -> Result<SosProgram, BuildError> {
    c.validate().map_err(BuildError::Invalid)?;
    let d = c.dimension;
    if prop.kappa.dimension() != d {
        return Err(BuildError::Invalid(format!(
            "property polynomial has dimension {}, system has {d}",
            prop.kappa.dimension()
        )));
    }
    let kdeg = prop.kappa.degree();
    let required = (kdeg.div_ceil(2)).max(1);
    if m < required {
        return Err(BuildError::StepTooSmall {
            m,
            template_degree: 2 * m,
            property_degree: kdeg,
            required,
        });
    }
    let two_m = 2 * m;
    let template_basis = monomial_basis(d, two_m);

    let nb = c.branches.len();
    let mut identities = Vec::with_capacity(nb + 2);
    identities.push(IdentityInfo {
        label: "init".into(),
        degree: two_m,
        rows: monomial_basis(d, two_m),
    });
    for (i, br) in c.branches.iter().enumerate() {
        let cap = two_m * br.update_degree();
        identities.push(IdentityInfo {
            label: format!("branch[{i}]"),
            degree: cap,
            rows: monomial_basis(d, cap),
        });
    }
    identities.push(IdentityInfo {
        label: "property".into(),
        degree: two_m,
        rows: monomial_basis(d, two_m),
    });

    let mut gram_blocks = Vec::new();
    gram_blocks.push(GramBlock {
        role: GramRole::InitWitness,
        basis: monomial_basis(d, m),
        multiplies: None,
        identity: 0,
        sign: -1.0,
    });
    let init_cs = c.init.constraints(d);
    for (j, (r, _)) in init_cs.iter_all().enumerate() {
        if let Some(h) = half_budget(two_m, r.degree()) {
            gram_blocks.push(GramBlock {
                role: GramRole::InitMultiplier { constraint: j },
                basis: monomial_basis(d, h),
                multiplies: Some(r.clone()),
                identity: 0,
                sign: 1.0,
            });
        }
    }
    for (i, br) in c.branches.iter().enumerate() {
        let cap = two_m * br.update_degree();
        gram_blocks.push(GramBlock {
            role: GramRole::BranchWitness { branch: i },
            basis: monomial_basis(d, cap / 2),
            multiplies: None,
            identity: i + 1,
            sign: -1.0,
        });
        for (j, (r, _)) in br.guard.iter_all().enumerate() {
            if let Some(h) = half_budget(cap, r.degree()) {
                gram_blocks.push(GramBlock {
                    role: GramRole::BranchMultiplier { branch: i, constraint: j },
                    basis: monomial_basis(d, h),
                    multiplies: Some(r.clone()),
                    identity: i + 1,
                    sign: 1.0,
                });
            }
        }
        for (j, (r, _)) in c.loop_guard.iter_all().enumerate() {
            if let Some(h) = half_budget(cap, r.degree()) {
                gram_blocks.push(GramBlock {
                    role: GramRole::LoopMultiplier { branch: i, constraint: j },
                    basis: monomial_basis(d, h),
                    multiplies: Some(r.clone()),
                    identity: i + 1,
                    sign: 1.0,
                });
            }
        }
    }
    gram_blocks.push(GramBlock {
        role: GramRole::PropertyWitness,
        basis: monomial_basis(d, m),
        multiplies: None,
        identity: nb + 1,
        sign: -1.0,
    });

    Ok(SosProgram {
        cpds: c.clone(),
        property: prop.clone(),
        step: m,
        template_basis,
        gram_blocks,
        identities,
    })
}

/// Where each symbolic unknown landed in the SDP.
///
/// The scalar unknowns are *reduced away* rather than carried as split
/// variables: the property identity pins the template to `p = kappa + psi`
/// (eliminating every template coefficient along with that identity's rows),
/// and the constant row of the initial-bound identity pins
/// `w = [1](p - Σ s_j·r_j + s_0)`, which becomes the SDP objective.  What
/// remains is a pure semidefinite program over the Gram blocks.
#[derive(Clone, Debug)]
pub struct SdpMapping {
    pub problem: SdpProblem,
    pub hints: SolveHints,
    /// SDP block index of each [`GramBlock`] (in order).
    pub gram_block_index: Vec<usize>,
    /// Index (into `gram_blocks`) of the witness defining `p - kappa`.
    pub psi_gram: usize,
    /// Constant to add to the SDP optimum to recover the bound `w`.
    pub objective_shift: f64,
    /// `(start, len)` row span of each identity.  The initial identity's
    /// span excludes its constant row (reduced into the objective); the
    /// property identity's span is empty (reduced into the substitution).
    pub identity_rows: Vec<(usize, usize)>,
    /// `(identity, monomial)` labeling of every SDP row, in order.
    pub row_monomials: Vec<(usize, Monomial)>,
}

/// All powers `T^beta` for `beta` in `basis`, computed incrementally along
/// the graded order (each power extends an already-computed one by a single
/// component).
fn update_powers(update: &[Polynomial], basis: &[Monomial]) -> HashMap<Monomial, Polynomial> {
    let d = update.len();
    let mut memo: HashMap<Monomial, Polynomial> = HashMap::with_capacity(basis.len());
    for mono in basis {
        if mono.degree() == 0 {
            memo.insert(mono.clone(), Polynomial::one(d));
            continue;
        }
        let k = mono.exponents.iter().position(|&e| e > 0).expect("nonzero degree");
        let mut prev = mono.clone();
        prev.exponents[k] -= 1;
        let p = memo.get(&prev).expect("graded order visits predecessors first").mul(&update[k]);
        memo.insert(mono.clone(), p);
    }
    memo
}

/// A coefficient the identity pins to a nonzero value that no Gram entry can
/// produce: the step is infeasible, and the offending monomial says why.
/// Cannot occur for a freshly built program (the witness bases cover every
/// budgeted monomial); it arises only after [`facial_reduce`] proves the
/// covering entries are zero in every feasible point.
#[derive(Debug, Clone, Error)]
#[error(
    "the {identity} identity requires coefficient {value} on {monomial}, but every certificate term that could produce it is forced to zero"
)]
pub struct Unmatchable {
    pub identity: String,
    pub monomial: String,
    pub value: f64,
}

/// Lower the symbolic program to a pure semidefinite program: one block per
/// Gram matrix, one equality row per matched coefficient, objective equal to
/// the reduced expression for the bound `w` (see [`SdpMapping`]).
///
/// Rows are derived from the monomials the blocks can actually reach, so the
/// same routine lowers both full programs (where the reach is the whole
/// degree-bounded basis) and facially reduced ones.
pub fn lower_to_sdp(sos: &SosProgram) -> Result<SdpMapping, Unmatchable> {
    let nb = sos.cpds.branches.len();
    let psi_gram = sos
        .gram_blocks
        .iter()
        .position(|g| g.role == GramRole::PropertyWitness)
        .expect("build always emits the property witness");
    let psi_basis = &sos.gram_blocks[psi_gram].basis;

    // coefficient maps per identity, keyed in canonical monomial order
    let mut entry_maps: Vec<BTreeMap<Monomial, Vec<MatEntry>>> = vec![BTreeMap::new(); nb + 2];
    let mut b_maps: Vec<BTreeMap<Monomial, f64>> = vec![BTreeMap::new(); nb + 2];

    // right-hand sides from the substitution p = kappa + psi: the initial
    // identity keeps [kappa], each branch identity keeps [kappa∘T - kappa]
    for (mono, v) in sos.property.kappa.terms() {
        b_maps[0].insert(mono.clone(), v);
    }
    for (i, br) in sos.cpds.branches.iter().enumerate() {
        let known = sos.property.kappa.compose(&br.update).sub(&sos.property.kappa);
        for (mono, v) in known.terms() {
            b_maps[i + 1].insert(mono.clone(), v);
        }
    }

    // the witness psi stands in for p - kappa wherever p occurred:
    // -psi in the initial identity, psi - psi∘T_i in each branch identity
    for a in 0..psi_basis.len() {
        for bb in a..psi_basis.len() {
            let prod = psi_basis[a].mul(&psi_basis[bb]);
            entry_maps[0].entry(prod).or_default().push(MatEntry {
                block: psi_gram,
                i: a,
                j: bb,
                value: -1.0,
            });
        }
    }
    for (i, br) in sos.cpds.branches.iter().enumerate() {
        let powers = update_powers(&br.update, &sos.template_basis);
        for a in 0..psi_basis.len() {
            for bb in a..psi_basis.len() {
                let prod = psi_basis[a].mul(&psi_basis[bb]);
                let tp = powers.get(&prod).expect("every template monomial has a power");
                let mut delta: BTreeMap<&Monomial, f64> = BTreeMap::new();
                for (mono, v) in tp.terms() {
                    delta.insert(mono, -v);
                }
                *delta.entry(&prod).or_insert(0.0) += 1.0;
                for (mono, v) in delta {
                    if v == 0.0 {
                        continue;
                    }
                    entry_maps[i + 1].entry(mono.clone()).or_default().push(MatEntry {
                        block: psi_gram,
                        i: a,
                        j: bb,
                        value: v,
                    });
                }
            }
        }
    }

    // remaining Gram unknowns: block g, pair (a, b) contributes
    // sign·[x^row](z_a z_b r)
    for (g, gb) in sos.gram_blocks.iter().enumerate() {
        if g == psi_gram {
            continue;
        }
        let map = &mut entry_maps[gb.identity];
        for a in 0..gb.basis.len() {
            for bb in a..gb.basis.len() {
                let prod = gb.basis[a].mul(&gb.basis[bb]);
                match &gb.multiplies {
                    None => {
                        map.entry(prod).or_default().push(MatEntry {
                            block: g,
                            i: a,
                            j: bb,
                            value: gb.sign,
                        });
                    }
                    Some(r) => {
                        for (mono, v) in r.mul_monomial(&prod, 1.0).terms() {
                            map.entry(mono.clone()).or_default().push(MatEntry {
                                block: g,
                                i: a,
                                j: bb,
                                value: gb.sign * v,
                            });
                        }
                    }
                }
            }
        }
    }

    // assemble rows in canonical order; the initial identity's constant row
    // (w + row(X) = b0 pins w) is diverted into the objective  b0 - row(X)
    let blocks: Vec<BlockSpec> =
        sos.gram_blocks.iter().map(|g| BlockSpec { size: g.basis.len(), diag: false }).collect();
    let mut identity_rows = Vec::with_capacity(nb + 2);
    let mut row_monomials: Vec<(usize, Monomial)> = Vec::new();
    let mut rows: Vec<Vec<MatEntry>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut objective_shift = 0.0;
    let mut cost: Vec<MatEntry> = Vec::new();
    for k in 0..=nb {
        for (mono, v) in &b_maps[k] {
            if *v != 0.0 && !entry_maps[k].contains_key(mono) {
                return Err(Unmatchable {
                    identity: sos.identities[k].label.clone(),
                    monomial: mono.to_string(),
                    value: *v,
                });
            }
        }
        let start = row_monomials.len();
        for (mono, ents) in &entry_maps[k] {
            let bv = b_maps[k].get(mono).copied().unwrap_or(0.0);
            if k == 0 && mono.degree() == 0 {
                objective_shift = bv;
                cost = ents.iter().map(|e| MatEntry { value: -e.value, ..*e }).collect();
                continue;
            }
            rows.push(ents.clone());
            b.push(bv);
            row_monomials.push((k, mono.clone()));
        }
        identity_rows.push((start, row_monomials.len() - start));
    }
    identity_rows.push((row_monomials.len(), 0));
    debug_assert!(!cost.is_empty(), "the initial witness always covers the constant row");

    let mut problem = SdpProblem { blocks, cost, rows, b };
    problem.canonicalize();
    problem.validate().expect("lowered problem is structurally valid");

    Ok(SdpMapping {
        problem,
        hints: SolveHints::default(),
        gram_block_index: (0..sos.gram_blocks.len()).collect(),
        psi_gram,
        objective_shift,
        identity_rows,
        row_monomials,
    })
}

/// Pointwise sign of the top-degree homogeneous part of `r`, when it is
/// definite by inspection: `Some(1.0)` if every top term has even exponents
/// and a positive coefficient (so the form is nonnegative everywhere),
/// `Some(-1.0)` for the negation, `None` when the sign is not determined.
fn top_sign(r: &Polynomial) -> Option<f64> {
    let deg = r.degree();
    let mut pos = false;
    let mut neg = false;
    for (mono, v) in r.terms() {
        if mono.degree() != deg {
            continue;
        }
        if mono.exponents.iter().any(|&e| e % 2 != 0) {
            return None;
        }
        if v > 0.0 {
            pos = true;
        } else {
            neg = true;
        }
    }
    match (pos, neg) {
        (true, false) => Some(1.0),
        (false, true) => Some(-1.0),
        _ => None,
    }
}

/// Exact presolve: restrict each Gram block to the face its identity forces.
///
/// Matching coefficients at the highest reachable degree of an identity often
/// leaves no freedom at all.  If every term that can reach that degree is a
/// pointwise sign-definite form of the same sign (a subtracted witness, a
/// multiplier whose constraint has a definite top like a ball or a constant,
/// or the composed template when its top factors through independent leading
/// forms) while the known right-hand side stops short of it, then the terms'
/// top coefficients must cancel *identically*, and a positive semidefinite
/// Gram matrix representing an identically zero form is zero on the
/// corresponding rows.  Those basis monomials are therefore zero in **every**
/// feasible point, and deleting them preserves the feasible set exactly while
/// restoring an interior for the solver.  The argument repeats on the smaller
/// bases until a right-hand side, an indefinite top (e.g. an affine box
/// face), or a sign clash pins the degree.
///
/// Programs whose identities are already pinned at the top (e.g. ball-shaped
/// initial regions whose multiplier tops point the other way) pass through
/// unchanged.  The returned program keeps the original construction metadata;
/// only the block bases shrink (blocks forced to zero entirely are dropped),
/// and [`lower_to_sdp`] derives the surviving rows from the reachable
/// monomials.
pub fn facial_reduce(sos: &SosProgram) -> SosProgram {
    let mut out = sos.clone();
    let nb = out.cpds.branches.len();
    let psi = out
        .gram_blocks
        .iter()
        .position(|g| g.role == GramRole::PropertyWitness)
        .expect("build always emits the property witness");
    let kappa = out.property.kappa.clone();
    let bpoly_deg: Vec<Option<u32>> = std::iter::once(if kappa.is_zero() {
        None
    } else {
        Some(kappa.degree())
    })
    .chain(out.cpds.branches.iter().map(|br| {
        let p = kappa.compose(&br.update).sub(&kappa);
        if p.is_zero() {
            None
        } else {
            Some(p.degree())
        }
    }))
    .collect();
    // degree of T^alpha per branch, for the composed-template reach; zero
    // powers are omitted (they contribute nothing at any degree)
    let tops: Vec<HashMap<Monomial, Polynomial>> = out
        .cpds
        .branches
        .iter()
        .map(|br| {
            update_powers(&br.update, &out.template_basis)
                .into_iter()
                .filter(|(_, p)| !p.is_zero())
                .collect()
        })
        .collect();
    let tdeg = |branch: usize, mono: &Monomial| tops[branch].get(mono).map(|p| p.degree());

    #[derive(Clone)]
    enum Rem {
        /// Drop the degree-`h` layer of block `g`.
        BlockLayer { g: usize, h: u32 },
        /// Drop the degree-`h` layer of the template witness.
        PsiLayer { h: u32 },
        /// Drop template monomials whose branch-composed degree is `t`.
        PsiComposed { branch: usize, t: u32 },
    }

    loop {
        let mut changed = false;
        for k in 0..=nb {
            // (reach, pointwise sign of the top contribution, removal)
            let mut contribs: Vec<(u32, Option<f64>, Rem)> = Vec::new();
            for (g, gb) in out.gram_blocks.iter().enumerate() {
                if gb.identity != k || g == psi || gb.basis.is_empty() {
                    continue;
                }
                let h = gb.basis.iter().map(|mo| mo.degree()).max().unwrap();
                let (reach, sign) = match &gb.multiplies {
                    None => (2 * h, Some(gb.sign)),
                    Some(r) => (2 * h + r.degree(), top_sign(r).map(|s| s * gb.sign)),
                };
                contribs.push((reach, sign, Rem::BlockLayer { g, h }));
            }
            let psi_basis = &out.gram_blocks[psi].basis;
            let h_psi = psi_basis.iter().map(|mo| mo.degree()).max().unwrap_or(0);
            if k == 0 {
                contribs.push((2 * h_psi, Some(-1.0), Rem::PsiLayer { h: h_psi }));
            } else {
                let i = k - 1;
                contribs.push((2 * h_psi, Some(1.0), Rem::PsiLayer { h: h_psi }));
                if let Some(maxt) = psi_basis.iter().filter_map(|mo| tdeg(i, mo)).max() {
                    if maxt > 0 {
                        contribs.push((
                            2 * maxt,
                            Some(-1.0),
                            Rem::PsiComposed { branch: i, t: maxt },
                        ));
                    }
                }
            }
            let dmax = contribs.iter().map(|c| c.0).max().unwrap_or(0);
            if dmax == 0 || bpoly_deg[k].is_some_and(|bd| bd >= dmax) {
                continue;
            }
            let participants: Vec<&(u32, Option<f64>, Rem)> =
                contribs.iter().filter(|c| c.0 == dmax).collect();
            let mut sgn = 0.0;
            let mut forced = true;
            for (_, s, rem) in participants.iter().map(|c| &**c) {
                match s {
                    None => {
                        forced = false;
                        break;
                    }
                    Some(s) => {
                        if sgn == 0.0 {
                            sgn = *s;
                        } else if sgn != *s {
                            forced = false;
                            break;
                        }
                    }
                }
                if let Rem::PsiComposed { branch, t } = rem {
                    // sign-definiteness of the composed top needs every
                    // participating product to come from the same layer
                    // (t(a) = t(b) = dmax/2), and zeroing its Gram rows needs
                    // the layer's leading forms to be linearly independent
                    let ts: std::collections::BTreeSet<u32> =
                        psi_basis.iter().filter_map(|mo| tdeg(*branch, mo)).collect();
                    let principal = ts
                        .iter()
                        .all(|&t1| t1 > dmax || 2 * t1 == dmax || !ts.contains(&(dmax - t1)));
                    let leading: Vec<Polynomial> = psi_basis
                        .iter()
                        .filter(|mo| tdeg(*branch, mo) == Some(*t))
                        .map(|mo| {
                            let p = &tops[*branch][mo];
                            let top = p.degree();
                            Polynomial::from_terms(
                                p.dimension(),
                                p.terms()
                                    .filter(|(mo, _)| mo.degree() == top)
                                    .map(|(mo, v)| (mo.clone(), v)),
                            )
                        })
                        .collect();
                    if !principal || !independent(&leading) {
                        forced = false;
                        break;
                    }
                }
            }
            if !forced || sgn == 0.0 {
                continue;
            }
            let removals: Vec<Rem> = participants.iter().map(|c| c.2.clone()).collect();
            for rem in removals {
                match rem {
                    Rem::BlockLayer { g, h } => {
                        out.gram_blocks[g].basis.retain(|mo| mo.degree() < h);
                    }
                    Rem::PsiLayer { h } => {
                        out.gram_blocks[psi].basis.retain(|mo| mo.degree() < h);
                    }
                    Rem::PsiComposed { branch, t } => {
                        out.gram_blocks[psi].basis.retain(|mo| tdeg(branch, mo) != Some(t));
                    }
                }
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
    out.gram_blocks.retain(|g| !g.basis.is_empty());
    out
}

/// Numerical linear independence of a family of polynomials (coefficient
/// vectors of rank equal to the family size).
fn independent(polys: &[Polynomial]) -> bool {
    if polys.len() <= 1 {
        return !polys.is_empty();
    }
    let support: Vec<Monomial> = {
        let mut set: std::collections::BTreeSet<Monomial> = Default::default();
        for p in polys {
            set.extend(p.terms().map(|(mo, _)| mo.clone()));
        }
        set.into_iter().collect()
    };
    let mut mat = nalgebra::DMatrix::zeros(polys.len(), support.len());
    for (r, p) in polys.iter().enumerate() {
        for (mo, v) in p.terms() {
            let c = support.binary_search(mo).expect("support contains every term");
            mat[(r, c)] = v;
        }
    }
    let scale = mat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    mat.rank(1e-9 * scale.max(1.0)) == polys.len()
}

/// Closed-form sizes of the certificate program at one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictedSizes {
    /// Scalar decision variables: one per Gram upper-triangle entry.
    pub scalar_vars: usize,
    /// Aggregated coefficient-matching rows of the reduced program.
    pub rows: usize,
    /// Total side length of the block-diagonal SDP variable.
    pub matrix_size: usize,
}

/// Predicted program sizes from the closed-form basis counts, without
/// building anything; used to cross-check the constructed program and to
/// refuse oversized instances before allocation.
pub fn predicted_sizes(
    c: &Cpds,
    prop: &SublevelProperty,
    m: u32,
) -> Result<PredictedSizes, BuildError> {
    let d = c.dimension;
    let kdeg = prop.kappa.degree();
    let required = (kdeg.div_ceil(2)).max(1);
    if m < required {
        return Err(BuildError::StepTooSmall {
            m,
            template_degree: 2 * m,
            property_degree: kdeg,
            required,
        });
    }
    let two_m = 2 * m;
    let tri = |n: usize| n * (n + 1) / 2;
    // the two witnesses over the state space
    let mut vars = 2 * tri(basis_size(d, m));
    let mut side = 2 * basis_size(d, m);
    let mut rows = basis_size(d, two_m) - 1;
    for (r, _) in c.init.constraints(d).iter_all() {
        if let Some(h) = half_budget(two_m, r.degree()) {
            vars += tri(basis_size(d, h));
            side += basis_size(d, h);
        }
    }
    for br in &c.branches {
        let cap = two_m * br.update_degree();
        rows += basis_size(d, cap);
        vars += tri(basis_size(d, cap / 2));
        side += basis_size(d, cap / 2);
        for (r, _) in br.guard.iter_all().chain(c.loop_guard.iter_all()) {
            if let Some(h) = half_budget(cap, r.degree()) {
                vars += tri(basis_size(d, h));
                side += basis_size(d, h);
            }
        }
    }
    Ok(PredictedSizes { scalar_vars: vars, rows, matrix_size: side })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_program, PropertyMode};
    use rand::{Rng, SeedableRng};

    const EX_RUNNING: &str = r#"
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

    fn running_example() -> (Cpds, SublevelProperty) {
        let prog = parse_program(EX_RUNNING).unwrap();
        (prog.cpds, prog.property.unwrap())
    }

    #[test]
    fn bookkeeping_matches_closed_forms() {
        let (c, prop) = running_example();
        let sos = build(&c, &prop, 3).unwrap();
        // template: all monomials of degree <= 6 in two variables
        assert_eq!(sos.template_basis.len(), 28);
        assert_eq!(sos.template_basis.len(), basis_size(2, 6));
        // identities: init + two branches + property
        assert_eq!(sos.identities.len(), 4);
        assert_eq!(sos.identities[0].rows.len(), 28);
        // cubic updates: branch budget 2*3*3 = 18
        assert_eq!(sos.identities[1].degree, 18);
        assert_eq!(sos.identities[1].rows.len(), basis_size(2, 18));
        // witness bases: degree m over the state space, m*t per branch
        assert_eq!(sos.gram_blocks[0].basis.len(), 10);
        let bw = sos
            .gram_blocks
            .iter()
            .find(|g| g.role == GramRole::BranchWitness { branch: 0 })
            .unwrap();
        assert_eq!(bw.basis.len(), basis_size(2, 9));
        // guard multiplier: degree-2 constraint inside budget 18
        let gm = sos
            .gram_blocks
            .iter()
            .find(|g| g.role == GramRole::BranchMultiplier { branch: 0, constraint: 0 })
            .unwrap();
        assert_eq!(gm.basis.len(), basis_size(2, 8));
        // box constraints: degree 1 inside budget 6
        let im = sos
            .gram_blocks
            .iter()
            .find(|g| g.role == GramRole::InitMultiplier { constraint: 0 })
            .unwrap();
        assert_eq!(im.basis.len(), basis_size(2, 2));

        let sizes = predicted_sizes(&c, &prop, 3).unwrap();
        assert_eq!(sizes.scalar_vars, sos.num_scalar_vars());
        assert_eq!(sizes.rows, sos.num_rows());
        assert_eq!(sizes.matrix_size, sos.total_matrix_size());
        // reduced rows: template-degree rows minus the constant one, plus the
        // two branch identities
        let (vars, rows) = (sizes.scalar_vars, sizes.rows);
        assert_eq!(rows, 28 - 1 + 2 * basis_size(2, 18));

        let m = lower_to_sdp(&sos).unwrap();
        assert_eq!(m.problem.num_rows(), rows);
        assert_eq!(m.problem.num_scalar_vars(), vars);
        assert_eq!(m.row_monomials.len(), rows);
        // the eliminated scalars leave a pure semidefinite program
        assert!(m.problem.blocks.iter().all(|b| !b.diag));
        assert!(m.hints.split_pairs.is_empty());
    }

    #[test]
    fn step_too_small_is_reported() {
        let (c, prop) = running_example();
        let prop4 = SublevelProperty {
            kappa: Polynomial::parse("x1^4 + x2^4", 2).unwrap(),
            mode: PropertyMode::Bounded,
        };
        assert!(build(&c, &prop, 1).is_ok());
        let e = build(&c, &prop4, 1).unwrap_err();
        match e {
            BuildError::StepTooSmall { required, .. } => assert_eq!(required, 2),
            other => panic!("expected step error, got {other}"),
        }
    }

    /// Evaluate one linear row functional at a raw block assignment using the
    /// symmetric sparse-entry convention.
    fn row_value(entries: &[MatEntry], x: &[Vec<f64>], sizes: &[usize]) -> f64 {
        let mut acc = 0.0;
        for e in entries {
            let n = sizes[e.block];
            let xb = &x[e.block];
            if e.i == e.j {
                acc += e.value * xb[e.i * n + e.j];
            } else {
                acc += e.value * (xb[e.i * n + e.j] + xb[e.j * n + e.i]);
            }
        }
        acc
    }

    /// The lowered rows and objective must agree, coefficient by coefficient,
    /// with the symbolically reconstructed identities for arbitrary Gram
    /// assignments, under the reduced definitions `p = kappa + psi` and
    /// `w = [1](p - Σ s_j·r_j + s_0)`.
    #[test]
    fn lowering_matches_symbolic_reconstruction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for (src, m) in [(EX_RUNNING, 1), (EX_RUNNING, 2)] {
            let prog = parse_program(src).unwrap();
            let (c, prop) = (prog.cpds, prog.property.unwrap());
            let d = c.dimension;
            let sos = build(&c, &prop, m).unwrap();
            let lowered = lower_to_sdp(&sos).unwrap();

            // random symmetric assignment for every Gram block
            let sizes: Vec<usize> = lowered.problem.blocks.iter().map(|b| b.size).collect();
            let mut x: Vec<Vec<f64>> = Vec::new();
            for &n in &sizes {
                let mut mat = vec![0.0; n * n];
                for i in 0..n {
                    for j in i..n {
                        let v = rng.gen_range(-1.0..1.0);
                        mat[i * n + j] = v;
                        mat[j * n + i] = v;
                    }
                }
                x.push(mat);
            }

            let gram_poly = |g: usize| {
                let gb = &sos.gram_blocks[g];
                let n = gb.basis.len();
                let xb = &x[lowered.gram_block_index[g]];
                let mut s = Polynomial::zero(d);
                for a in 0..n {
                    for bb in 0..n {
                        let prod = gb.basis[a].mul(&gb.basis[bb]);
                        s = s.add(&Polynomial::monomial(d, prod, xb[a * n + bb]));
                    }
                }
                s
            };

            // reduced definitions of the eliminated scalars
            let psi = gram_poly(lowered.psi_gram);
            let p = prop.kappa.add(&psi);
            let one = Monomial::one(d);
            let mut w = p.coeff(&one);
            for (g, gb) in sos.gram_blocks.iter().enumerate() {
                match gb.role {
                    GramRole::InitMultiplier { .. } => {
                        let r = gb.multiplies.as_ref().unwrap();
                        w -= gram_poly(g).mul(r).coeff(&one);
                    }
                    GramRole::InitWitness => w += gram_poly(g).coeff(&one),
                    _ => {}
                }
            }

            // symbolic residuals of the three identity families
            let nb = c.branches.len();
            let mut residuals = vec![Polynomial::zero(d); nb + 2];
            residuals[0] = Polynomial::constant(d, w).sub(&p);
            residuals[nb + 1] = p.sub(&prop.kappa);
            for (i, br) in c.branches.iter().enumerate() {
                residuals[i + 1] = p.sub(&p.compose(&br.update));
            }
            for (g, gb) in sos.gram_blocks.iter().enumerate() {
                let mut sp = gram_poly(g);
                if let Some(r) = &gb.multiplies {
                    sp = sp.mul(r);
                }
                residuals[gb.identity] = residuals[gb.identity].add(&sp.scale(gb.sign));
            }

            // the property identity is satisfied identically by construction
            assert!(
                residuals[nb + 1].max_abs_coeff() <= 1e-12,
                "template substitution must make the property identity exact"
            );
            // so is the constant row of the initial identity
            assert!(
                residuals[0].coeff(&one).abs() <= 1e-9,
                "the objective reduction must satisfy the constant row exactly"
            );

            // every kept row equals the matching residual coefficient
            for (row, (idx, mono)) in lowered.row_monomials.iter().enumerate() {
                let lhs = row_value(&lowered.problem.rows[row], &x, &sizes)
                    - lowered.problem.b[row];
                let sym = residuals[*idx].coeff(mono);
                assert!(
                    (lhs - sym).abs() <= 1e-9 * (1.0 + sym.abs()),
                    "identity {idx} row {mono}: linear {lhs} vs symbolic {sym}"
                );
            }
            // and no residual monomial escapes the row set
            for (idx, id) in sos.identities.iter().enumerate().take(nb + 1) {
                for (mono, v) in residuals[idx].terms() {
                    if idx == 0 && mono.degree() == 0 {
                        continue;
                    }
                    assert!(
                        id.rows.binary_search(mono).is_ok(),
                        "identity {}: residual monomial {mono} (coeff {v}) has no row",
                        id.label
                    );
                }
            }

            // objective: <C, X> + shift == w
            let cx = row_value(&lowered.problem.cost, &x, &sizes);
            assert!(
                (cx + lowered.objective_shift - w).abs() <= 1e-9 * (1.0 + w.abs()),
                "objective {cx} + shift {} must equal the reduced bound {w}",
                lowered.objective_shift
            );
        }
    }

    #[test]
    fn lowering_is_deterministic() {
        let (c, prop) = running_example();
        let a = lower_to_sdp(&build(&c, &prop, 2).unwrap()).unwrap();
        let bq = lower_to_sdp(&build(&c, &prop, 2).unwrap()).unwrap();
        assert_eq!(
            crate::sdp::export_sdpa(&a.problem),
            crate::sdp::export_sdpa(&bq.problem),
            "identical inputs must lower to byte-identical problems"
        );
        assert_eq!(a.objective_shift, bq.objective_shift);
    }

    #[test]
    fn three_dimensional_sizes() {
        let src = r#"
vars x1, x2, x3;
init x1 in [0.9, 1.1], x2 in [0, 0.2], x3 in [0, 0.2];
property kappa = x1^2 + x2^2 + x3^2;
while (-1 <= 0) {
  if (x1^2 + x2^2 + x3^2 <= 1) {
    x1, x2, x3 = 0.25*(0.8*x1^2 + 1.4*x2 - 0.5*x3^2),
                 0.25*(1.3*x1 + 0.5*x3^2),
                 0.25*(1.4*x2 + 0.8*x3^2);
  } else {
    x1, x2, x3 = 0.25*(0.5*x1 + 0.4*x2^2),
                 0.25*(-0.6*x2^2 + 0.3*x3^2),
                 0.25*(0.5*x3 + 0.4*x1^2);
  }
}
"#;
        let prog = parse_program(src).unwrap();
        let sos = build(&prog.cpds, &prog.property.clone().unwrap(), 2).unwrap();
        // quadratic updates: branch budget 2*2*2 = 8
        assert_eq!(sos.identities[1].degree, 8);
        // witness over the state space has the degree-2 basis in 3 variables
        assert_eq!(sos.gram_blocks[0].basis.len(), 10);
        let sizes = predicted_sizes(&prog.cpds, prog.property.as_ref().unwrap(), 2).unwrap();
        assert_eq!(sizes.rows, basis_size(3, 4) - 1 + 2 * basis_size(3, 8));
        assert_eq!(sizes.scalar_vars, sos.num_scalar_vars());
    }

    /// The presolve must recognise the forced structure of the running
    /// example: box initial faces cap the state-space witnesses below the
    /// template degree, and the complement branch (whose guard and loop rows
    /// both have definite tops) collapses all the way down to the data
    /// degree, pinning the template to an affine correction of `kappa`.
    #[test]
    fn facial_reduction_prunes_forced_layers() {
        let (c, prop) = running_example();
        let sos = build(&c, &prop, 3).unwrap();
        let red = facial_reduce(&sos);

        let basis_of = |role: GramRole| {
            red.gram_blocks.iter().find(|g| g.role == role).map(|g| g.basis.clone())
        };
        let max_deg = |b: &[Monomial]| b.iter().map(|mo| mo.degree()).max().unwrap();

        // template witness: only the affine layer survives
        let psi = basis_of(GramRole::PropertyWitness).unwrap();
        assert_eq!(psi.len(), 3);
        assert_eq!(max_deg(&psi), 1);
        // initial identity: top layer shaved once, then pinned by the
        // indefinite box faces
        let s0 = basis_of(GramRole::InitWitness).unwrap();
        assert_eq!(max_deg(&s0), 2);
        // branch 0 (ball guard, positive top): no inference possible
        let s1 = basis_of(GramRole::BranchWitness { branch: 0 }).unwrap();
        assert_eq!(max_deg(&s1), 9);
        // branch 1 (complement guard, negative top): collapsed to the degree
        // of kappa∘T - kappa
        let s2 = basis_of(GramRole::BranchWitness { branch: 1 }).unwrap();
        assert_eq!(max_deg(&s2), 3);
        let g2 = basis_of(GramRole::BranchMultiplier { branch: 1, constraint: 0 }).unwrap();
        assert_eq!(max_deg(&g2), 2);
        let l2 = basis_of(GramRole::LoopMultiplier { branch: 1, constraint: 0 }).unwrap();
        assert_eq!(max_deg(&l2), 3);

        // the reduced program still lowers cleanly and keeps every
        // right-hand-side coefficient coverable
        let lowered = lower_to_sdp(&red).unwrap();
        assert!(lowered.problem.num_rows() < lower_to_sdp(&sos).unwrap().problem.num_rows());

        // rows still match the symbolic identities for arbitrary assignments
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = c.dimension;
        let sizes: Vec<usize> = lowered.problem.blocks.iter().map(|b| b.size).collect();
        let mut x: Vec<Vec<f64>> = Vec::new();
        for &n in &sizes {
            let mut mat = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = rng.gen_range(-1.0..1.0);
                    mat[i * n + j] = v;
                    mat[j * n + i] = v;
                }
            }
            x.push(mat);
        }
        let gram_poly = |g: usize| {
            let gb = &red.gram_blocks[g];
            let n = gb.basis.len();
            let xb = &x[lowered.gram_block_index[g]];
            let mut s = Polynomial::zero(d);
            for a in 0..n {
                for bb in 0..n {
                    let prod = gb.basis[a].mul(&gb.basis[bb]);
                    s = s.add(&Polynomial::monomial(d, prod, xb[a * n + bb]));
                }
            }
            s
        };
        let psi_poly = gram_poly(lowered.psi_gram);
        let p = prop.kappa.add(&psi_poly);
        let one = Monomial::one(d);
        let mut w = p.coeff(&one);
        for (g, gb) in red.gram_blocks.iter().enumerate() {
            match gb.role {
                GramRole::InitMultiplier { .. } => {
                    w -= gram_poly(g).mul(gb.multiplies.as_ref().unwrap()).coeff(&one);
                }
                GramRole::InitWitness => w += gram_poly(g).coeff(&one),
                _ => {}
            }
        }
        let nb = c.branches.len();
        let mut residuals = vec![Polynomial::zero(d); nb + 1];
        residuals[0] = Polynomial::constant(d, w).sub(&p);
        for (i, br) in c.branches.iter().enumerate() {
            residuals[i + 1] = p.sub(&p.compose(&br.update));
        }
        for (g, gb) in red.gram_blocks.iter().enumerate() {
            if gb.identity > nb {
                continue;
            }
            let mut sp = gram_poly(g);
            if let Some(r) = &gb.multiplies {
                sp = sp.mul(r);
            }
            residuals[gb.identity] = residuals[gb.identity].add(&sp.scale(gb.sign));
        }
        for (row, (idx, mono)) in lowered.row_monomials.iter().enumerate() {
            let mut lhs = -lowered.problem.b[row];
            for e in &lowered.problem.rows[row] {
                let n = sizes[e.block];
                let xb = &x[e.block];
                lhs += if e.i == e.j {
                    e.value * xb[e.i * n + e.j]
                } else {
                    e.value * (xb[e.i * n + e.j] + xb[e.j * n + e.i])
                };
            }
            let sym = residuals[*idx].coeff(mono);
            assert!(
                (lhs - sym).abs() <= 1e-9 * (1.0 + sym.abs()),
                "identity {idx} row {mono}: linear {lhs} vs symbolic {sym}"
            );
        }
    }

    /// Systems that already have interior points must pass through the
    /// presolve untouched: a ball-shaped initial region pins the initial
    /// identity (its multiplier top points against the witnesses), and a
    /// linear update pins every branch identity (the template enters with
    /// both signs at the same degree).
    #[test]
    fn facial_reduction_leaves_pinned_programs_alone() {
        use crate::frontend::{Branch, ConstraintSet, InitRegion, Interval};
        let ball = Polynomial::parse("x1^2 + x2^2 - 1", 2).unwrap();
        let c = Cpds {
            dimension: 2,
            var_names: vec!["x1".into(), "x2".into()],
            init: InitRegion::SemiAlgebraic {
                constraints: ConstraintSet { strict: vec![], weak: vec![ball] },
                compact_attested: true,
                sample_box: vec![Interval { lo: -1.0, hi: 1.0 }, Interval { lo: -1.0, hi: 1.0 }],
            },
            loop_guard: ConstraintSet {
                strict: vec![],
                weak: vec![Polynomial::constant(2, -1.0)],
            },
            branches: vec![Branch {
                guard: ConstraintSet { strict: vec![], weak: vec![] },
                update: vec![
                    Polynomial::parse("0.5*x1 + 0.1*x2", 2).unwrap(),
                    Polynomial::parse("0.4*x2", 2).unwrap(),
                ],
            }],
        };
        let prop = SublevelProperty {
            kappa: Polynomial::parse("x1^2 + x2^2", 2).unwrap(),
            mode: PropertyMode::Bounded,
        };
        for m in 1..=2 {
            let sos = build(&c, &prop, m).unwrap();
            let red = facial_reduce(&sos);
            assert_eq!(red.gram_blocks.len(), sos.gram_blocks.len());
            for (a, b) in sos.gram_blocks.iter().zip(red.gram_blocks.iter()) {
                assert_eq!(a.basis, b.basis, "block {} must keep its basis", a.role.label());
            }
        }
    }
}
