//! TQO-1 and TQO-2 checks: exact (dense reduced density matrices) and
//! symbolic (stabilizer subgroup inclusion).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Model, Square};
use crate::linalg::{self, CMat, LocalOperator, C64, ZERO};
use crate::pauli::{minimum_distance, PauliOperator};

pub const KERNEL_RANK_CUT: f64 = 1e-10;
pub const KERNEL_ANGLE_TOL: f64 = 1e-8;
pub const TQO1_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Tqo1,
    Tqo2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Stabilizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub square: Square,
    pub diagnostic: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TqoReport {
    pub condition: Condition,
    pub method: Method,
    pub l_star: usize,
    pub passed: bool,
    pub squares_checked: usize,
    pub witnesses: Vec<Witness>,
    /// Distance found by the TQO-1 stabilizer search.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<usize>,
    /// False when the search cutoff was below the threshold f(L*).
    pub conclusive: bool,
    /// Largest TQO-1 deviation or TQO-2 principal angle seen (exact method).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_deviation: Option<f64>,
}

impl TqoReport {
    fn new(condition: Condition, method: Method, l_star: usize) -> Self {
        TqoReport {
            condition,
            method,
            l_star,
            passed: true,
            squares_checked: 0,
            witnesses: vec![],
            distance: None,
            conclusive: true,
            max_deviation: None,
        }
    }

    fn finish(mut self) -> Self {
        self.witnesses.sort_by(|a, b| a.square.cmp(&b.square));
        self.passed = self.witnesses.is_empty();
        self
    }
}

/// floor(L/2) - 1.
pub fn default_l_star(l: usize) -> usize {
    (l / 2).saturating_sub(1)
}

fn squares_up_to(model: &Model, l_star: usize) -> Vec<Square> {
    (1..=l_star.min(model.lattice.size())).flat_map(|r| model.lattice.squares(r)).collect()
}

/// TQO-2 through the lemma G(A) ⊆ G_B with B the (r+2)-square around A.
pub fn check_tqo2_stabilizer(model: &Model, l_star: usize) -> Result<TqoReport> {
    let lat = &model.lattice;
    let squares = squares_up_to(model, l_star);
    let outcomes: Vec<Result<Option<Witness>>> = squares
        .par_iter()
        .map(|a| {
            let region_a = lat.square_qubits(a);
            let b = lat.grow(a, 1);
            let region_b = lat.square_qubits(&b);
            let g_a = model.group().supported_subgroup(&region_a)?;
            let g_b = model.group().generated_subgroup(&region_b)?;
            Ok(g_a.first_outside(&g_b)?.map(|p| Witness {
                square: *a,
                diagnostic: format!("{p} lies in G(A) but not in G_B for B = {b}"),
            }))
        })
        .collect();
    let mut report = TqoReport::new(Condition::Tqo2, Method::Stabilizer, l_star);
    report.squares_checked = squares.len();
    for o in outcomes {
        if let Some(w) = o? {
            report.witnesses.push(w);
        }
    }
    Ok(report.finish())
}

/// TQO-1 via the code distance: pass iff no logical operator of weight ≤ factor·L*.
pub fn check_tqo1_stabilizer(model: &Model, l_star: usize, cutoff: usize, factor: f64) -> Result<TqoReport> {
    let threshold = (factor * l_star as f64).floor() as usize;
    let mut report = TqoReport::new(Condition::Tqo1, Method::Stabilizer, l_star);
    let search = minimum_distance(model.group(), cutoff.max(1))?;
    report.distance = search.distance;
    report.conclusive = search.distance.is_some() || cutoff >= threshold;
    if let (Some(d), Some(logical)) = (search.distance, search.logical) {
        if d <= threshold {
            let sites = model.lattice.sites_of_qubits(&logical.support());
            report.witnesses.push(Witness {
                square: model.lattice.covering_square(&sites),
                diagnostic: format!("logical operator {logical} of weight {d} ≤ {threshold}"),
            });
        }
    }
    Ok(report.finish())
}

/// Orthonormal basis of the global ground space (columns).
pub fn ground_basis(model: &Model) -> Result<CMat> {
    let p = model.ground_projector_dense()?;
    Ok(linalg::psd_range(&p, KERNEL_RANK_CUT))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tqo1Exact {
    pub square: Square,
    pub passed: bool,
    pub max_deviation: f64,
    pub worst_operator: Option<String>,
}

/// max over Pauli strings O on A of ‖P O P - c(O) P‖, c(O) = tr(POP)/rank P.
pub fn check_tqo1_exact(model: &Model, a: &Square) -> Result<Tqo1Exact> {
    let basis = ground_basis(model)?;
    tqo1_exact_with_basis(model, a, &basis)
}

fn tqo1_exact_with_basis(model: &Model, a: &Square, basis: &CMat) -> Result<Tqo1Exact> {
    let n = model.qubit_count();
    let region = model.lattice.square_qubits(a);
    if region.len() > 12 {
        return Err(Error::ResourceCap { what: "Pauli basis on A".into(), dim: 1 << (2 * region.len()), cap: 1 << 24 });
    }
    let k = basis.ncols();
    let total = 1usize << (2 * region.len());
    let results: Vec<(f64, usize)> = (0..total)
        .into_par_iter()
        .map(|code| {
            let p = pauli_from_code(n, &region, code);
            let (xm, zm) = p.masks();
            let c = crate::pauli::phase_value(p.phase_exponent());
            let mut applied = CMat::zeros(basis.nrows(), k);
            for col in 0..k {
                for b in 0..basis.nrows() {
                    let amp = basis[(b, col)];
                    if amp == ZERO {
                        continue;
                    }
                    let s = if (zm & b as u64).count_ones() % 2 == 1 { -c } else { c };
                    applied[(b ^ xm as usize, col)] += s * amp;
                }
            }
            let m = basis.adjoint() * applied;
            let tr = m.trace() / C64::new(k as f64, 0.0);
            let dev = m - CMat::identity(k, k) * tr;
            (linalg::op_norm(&dev), code)
        })
        .collect();
    let (dev, code) = results.into_iter().fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
    Ok(Tqo1Exact {
        square: *a,
        passed: dev <= TQO1_TOL,
        max_deviation: dev,
        worst_operator: (dev > 0.0).then(|| pauli_from_code(n, &region, code).to_string()),
    })
}

fn pauli_from_code(n: usize, region: &[usize], code: usize) -> PauliOperator {
    let letters: Vec<(usize, char)> = region
        .iter()
        .enumerate()
        .filter_map(|(i, &q)| match code >> (2 * i) & 3 {
            0 => None,
            1 => Some((q, 'X')),
            2 => Some((q, 'Z')),
            _ => Some((q, 'Y')),
        })
        .collect();
    PauliOperator::from_letters(n, &letters, 0).expect("valid letters")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tqo2Exact {
    pub square: Square,
    pub neighborhood: Square,
    pub passed: bool,
    pub rank_global: usize,
    pub rank_local: usize,
    pub max_angle: f64,
}

/// Compares the supports (equivalently kernels) of Tr_{A^c} P and Tr_{A^c} P_B.
pub fn check_tqo2_exact(model: &Model, a: &Square) -> Result<Tqo2Exact> {
    let p = model.ground_projector_dense()?;
    tqo2_exact_with_projector(model, a, &p)
}

fn tqo2_exact_with_projector(model: &Model, a: &Square, p: &CMat) -> Result<Tqo2Exact> {
    let lat = &model.lattice;
    let region_a = lat.square_qubits(a);
    let b = lat.grow(a, 1);
    let pb = model.local_ground_projector(&b)?;
    let all = lat.all_qubits();
    let rho = linalg::partial_trace(p, &all, &region_a)?;
    let rho_b = linalg::partial_trace(&pb.mat, &pb.qubits, &region_a)?;
    let range = linalg::psd_range(&rho, KERNEL_RANK_CUT);
    let range_b = linalg::psd_range(&rho_b, KERNEL_RANK_CUT);
    let angle = linalg::max_principal_angle(&range, &range_b);
    let same_rank = range.ncols() == range_b.ncols();
    Ok(Tqo2Exact {
        square: *a,
        neighborhood: b,
        passed: same_rank && angle < KERNEL_ANGLE_TOL,
        rank_global: range.ncols(),
        rank_local: range_b.ncols(),
        max_angle: angle,
    })
}

/// Exact TQO-1 over all squares with r ≤ L*.
pub fn check_tqo1_exact_all(model: &Model, l_star: usize) -> Result<TqoReport> {
    let basis = ground_basis(model)?;
    let squares = squares_up_to(model, l_star);
    let mut report = TqoReport::new(Condition::Tqo1, Method::Exact, l_star);
    report.squares_checked = squares.len();
    let mut worst = 0.0f64;
    for a in &squares {
        let r = tqo1_exact_with_basis(model, a, &basis)?;
        worst = worst.max(r.max_deviation);
        if !r.passed {
            report.witnesses.push(Witness {
                square: *a,
                diagnostic: format!(
                    "‖POP - cP‖ = {:.3e} for O = {}",
                    r.max_deviation,
                    r.worst_operator.unwrap_or_default()
                ),
            });
        }
    }
    report.max_deviation = Some(worst);
    Ok(report.finish())
}

/// Exact TQO-2 over all squares with r ≤ L*.
pub fn check_tqo2_exact_all(model: &Model, l_star: usize) -> Result<TqoReport> {
    let p = model.ground_projector_dense()?;
    let squares = squares_up_to(model, l_star);
    let mut report = TqoReport::new(Condition::Tqo2, Method::Exact, l_star);
    report.squares_checked = squares.len();
    let mut worst = 0.0f64;
    for a in &squares {
        let r = tqo2_exact_with_projector(model, a, &p)?;
        worst = worst.max(if r.rank_global == r.rank_local { r.max_angle } else { std::f64::consts::FRAC_PI_2 });
        if !r.passed {
            report.witnesses.push(Witness {
                square: *a,
                diagnostic: format!(
                    "rank {} (global) vs {} (local, B = {}), max angle {:.3e}",
                    r.rank_global, r.rank_local, r.neighborhood, r.max_angle
                ),
            });
        }
    }
    report.max_deviation = Some(worst);
    Ok(report.finish())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorollaryCheck {
    pub square: Square,
    pub norm_global: f64,
    pub norm_local: f64,
    pub passed: bool,
}

/// Given O_A with O_A P = 0, checks O_A P_B = 0 for B the (r+2)-square around A.
pub fn corollary_tqo3_check(model: &Model, a: &Square, op: &LocalOperator, tol: f64) -> Result<CorollaryCheck> {
    let lat = &model.lattice;
    let region_a = lat.square_qubits(a);
    if op.qubits.iter().any(|q| region_a.binary_search(q).is_err()) {
        return Err(Error::Precondition(format!("operator is not supported on {a}")));
    }
    let p = model.ground_projector_dense()?;
    let all = lat.all_qubits();
    let global = op.on(&all)? * &p;
    let norm_global = linalg::op_norm(&global);
    if norm_global > tol {
        return Err(Error::Precondition(format!("O_A P ≠ 0 (norm {norm_global:.3e})")));
    }
    let b = lat.grow(a, 1);
    let pb = model.local_ground_projector(&b)?;
    let local = op.on(&pb.qubits)? * &pb.mat;
    let norm_local = linalg::op_norm(&local);
    Ok(CorollaryCheck { square: *a, norm_global, norm_local, passed: norm_local <= tol })
}
