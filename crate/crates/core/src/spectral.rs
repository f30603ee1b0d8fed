//! Low-lying spectra, band checks against the H0 spectrum, relative bounds,
//! and the closed-form sector sweep of the unstable toric code.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Serialize, Serializer};

use crate::decomposition::LocalDecomposition;
use crate::error::{Error, Result};
use crate::lattice::{plaquette, star, HamiltonianOperator, Model, ModelKind, Normalization};
use crate::linalg::{self, CMat, C64, ZERO};
use crate::pauli::PauliOperator;

/// Relative tolerance for treating eigenvalues as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Hermitian operator that can be applied to vectors.
pub trait HermitianOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[C64]) -> Vec<C64>;
    fn to_dense(&self) -> Result<CMat>;
}

impl HermitianOp for CMat {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.nrows()];
        for (j, &x) in v.iter().enumerate() {
            if x == ZERO {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += self[(i, j)] * x;
            }
        }
        out
    }
    fn to_dense(&self) -> Result<CMat> {
        Ok(self.clone())
    }
}

impl HermitianOp for HamiltonianOperator {
    fn dim(&self) -> usize {
        HamiltonianOperator::dim(self)
    }
    fn apply(&self, v: &[C64]) -> Vec<C64> {
        HamiltonianOperator::apply(self, v)
    }
    fn to_dense(&self) -> Result<CMat> {
        HamiltonianOperator::to_dense(self)
    }
}

/// The `count` smallest eigenvalues: dense below the dense cap, restarted
/// Lanczos above it.
pub fn low_spectrum<H: HermitianOp + ?Sized>(h: &H, count: usize) -> Result<Vec<f64>> {
    let dim = h.dim();
    if dim <= linalg::dense_cap() {
        let vals = linalg::eigvalsh(&h.to_dense()?);
        return Ok(vals.into_iter().take(count).collect());
    }
    linalg::check_sparse("Krylov vectors", dim)?;
    Ok(lanczos_lowest(h, count, &LanczosOptions::default())?.values)
}

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Residual tolerance relative to max(1, |θ|).
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions { krylov_dim: 60, max_restarts: 400, tol: 1e-10, seed: 7 }
    }
}

#[derive(Clone, Debug)]
pub struct LanczosResult {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub restarts: usize,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn orthogonalize(v: &mut [C64], basis: &[Vec<C64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            for (x, y) in v.iter_mut().zip(q) {
                *x -= c * y;
            }
        }
    }
}

/// Restarted Lanczos with full reorthogonalization and locking of converged
/// Ritz pairs. Degenerate copies are found by restarting orthogonally to the
/// locked space; a final clean restart confirms nothing lower was missed.
pub fn lanczos_lowest<H: HermitianOp + ?Sized>(h: &H, count: usize, opts: &LanczosOptions) -> Result<LanczosResult> {
    let dim = h.dim();
    let count = count.min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let random_vec = |rng: &mut ChaCha8Rng| -> Vec<C64> {
        (0..dim)
            .map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                C64::new(a, b)
            })
            .collect()
    };
    let mut locked: Vec<Vec<C64>> = vec![];
    let mut locked_vals: Vec<f64> = vec![];
    let mut locked_res: Vec<f64> = vec![];
    let mut carry: Option<Vec<C64>> = None;
    let mut clean_checks = 0;
    let mut last_residuals = vec![];
    for restart in 0..opts.max_restarts {
        if locked.len() >= dim {
            break;
        }
        let mut v = match carry.take() {
            Some(c) => {
                let mut r = random_vec(&mut rng);
                let s = 1e-3 * norm(&c) / norm(&r).max(f64::MIN_POSITIVE);
                r.iter_mut().zip(&c).for_each(|(x, y)| *x = *y + *x * s);
                r
            }
            None => random_vec(&mut rng),
        };
        orthogonalize(&mut v, &locked);
        let nv = norm(&v);
        if nv < 1e-300 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);

        let m_max = opts.krylov_dim.min(dim - locked.len()).max(1);
        let mut q: Vec<Vec<C64>> = vec![v];
        let mut alpha = vec![];
        let mut beta: Vec<f64> = vec![];
        let last_beta;
        loop {
            let k = q.len() - 1;
            let mut w = h.apply(&q[k]);
            let a = dot(&q[k], &w).re;
            alpha.push(a);
            orthogonalize(&mut w, &locked);
            orthogonalize(&mut w, &q);
            let b = norm(&w);
            if q.len() == m_max || b < 1e-12 * (1.0 + a.abs()) {
                last_beta = if q.len() == m_max { b } else { 0.0 };
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|x| *x /= b);
            q.push(w);
        }
        let m = q.len();
        let t = DMatrix::<f64>::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (theta, y) = linalg::eigh_real(&t);
        let ritz = |k: usize| -> Vec<C64> {
            let mut x = vec![ZERO; dim];
            for (i, qi) in q.iter().enumerate() {
                let c = y[(i, k)];
                if c != 0.0 {
                    x.iter_mut().zip(qi).for_each(|(a, b)| *a += b * c);
                }
            }
            x
        };
        let residual = |k: usize| (last_beta * y[(m - 1, k)]).abs();
        let converged = |k: usize| residual(k) <= opts.tol * theta[k].abs().max(1.0);

        let threshold = if locked_vals.len() >= count {
            let mut s = locked_vals.clone();
            s.sort_by(f64::total_cmp);
            Some(s[count - 1])
        } else {
            None
        };
        let mut newly = 0;
        for k in 0..m {
            if !converged(k) {
                break;
            }
            if let Some(th) = threshold {
                if theta[k] >= th - DEGENERACY_TOL * th.abs().max(1.0) {
                    break;
                }
            }
            let mut x = ritz(k);
            orthogonalize(&mut x, &locked);
            let nx = norm(&x);
            if nx < 0.5 {
                break;
            }
            x.iter_mut().for_each(|a| *a /= nx);
            locked.push(x);
            locked_vals.push(theta[k]);
            locked_res.push(residual(k));
            newly += 1;
            if threshold.is_none() && locked.len() >= count {
                break;
            }
        }
        last_residuals = (0..m.min(count)).map(residual).collect();
        let lower_pending = threshold.is_some_and(|th| {
            let k = newly;
            k < m && !converged(k) && theta[k] < th - DEGENERACY_TOL * th.abs().max(1.0)
        });
        if lower_pending {
            clean_checks = 0;
            carry = Some(ritz(newly));
        } else if locked.len() >= count {
            if newly == 0 {
                clean_checks += 1;
                if clean_checks >= 2 {
                    let mut order: Vec<usize> = (0..locked_vals.len()).collect();
                    order.sort_by(|&a, &b| locked_vals[a].total_cmp(&locked_vals[b]));
                    return Ok(LanczosResult {
                        values: order.iter().take(count).map(|&i| locked_vals[i]).collect(),
                        residuals: order.iter().take(count).map(|&i| locked_res[i]).collect(),
                        restarts: restart,
                    });
                }
            } else {
                clean_checks = 0;
            }
        } else if newly == 0 && m > 0 {
            carry = Some(ritz(0));
        }
    }
    Err(Error::NoConvergence(format!(
        "Lanczos locked {} of {count} eigenpairs; last residual norms {last_residuals:?}",
        locked.len()
    )))
}

/// Per-eigenvalue band label, serialised as the integer k or "unassigned".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandLabel {
    Band(usize),
    Unassigned,
}

impl Serialize for BandLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BandLabel::Band(k) => s.serialize_u64(*k as u64),
            BandLabel::Unassigned => s.serialize_str("unassigned"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BandGap {
    pub k: usize,
    pub k_next: usize,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub band_assignments: Vec<BandLabel>,
    pub gaps: Vec<BandGap>,
    pub shift: f64,
}

impl SpectralReport {
    /// Shifts the lowest eigenvalue to 0 and assigns each eigenvalue to the
    /// nearest unperturbed level in `levels` (the distinct H0 eigenvalues,
    /// assumed to be non-negative integers).
    pub fn assign(eigenvalues: &[f64], levels: &[usize]) -> Self {
        let mut eig = eigenvalues.to_vec();
        eig.sort_by(f64::total_cmp);
        let shift = eig.first().map(|e| -e).unwrap_or(0.0);
        let band_assignments = eig
            .iter()
            .map(|&e| {
                let x = e + shift;
                levels
                    .iter()
                    .min_by(|a, b| (x - **a as f64).abs().total_cmp(&(x - **b as f64).abs()))
                    .map(|&k| BandLabel::Band(k))
                    .unwrap_or(BandLabel::Unassigned)
            })
            .collect();
        let mut report = SpectralReport { eigenvalues: eig, band_assignments, gaps: vec![], shift };
        report.gaps = report.band_gaps();
        report
    }

    /// (lowest, highest) shifted eigenvalue of each occupied band.
    pub fn band_ranges(&self) -> Vec<(usize, f64, f64)> {
        let mut out: Vec<(usize, f64, f64)> = vec![];
        for (e, b) in self.eigenvalues.iter().zip(&self.band_assignments) {
            let BandLabel::Band(k) = *b else { continue };
            let x = e + self.shift;
            match out.iter_mut().find(|r| r.0 == k) {
                Some(r) => {
                    r.1 = r.1.min(x);
                    r.2 = r.2.max(x);
                }
                None => out.push((k, x, x)),
            }
        }
        out.sort_by_key(|r| r.0);
        out
    }

    fn band_gaps(&self) -> Vec<BandGap> {
        self.band_ranges().windows(2).map(|w| BandGap { k: w[0].0, k_next: w[1].0, gap: w[1].1 - w[0].2 }).collect()
    }

    /// Spread (max - min) of band k.
    pub fn band_width(&self, k: usize) -> Option<f64> {
        self.band_ranges().into_iter().find(|r| r.0 == k).map(|r| r.2 - r.1)
    }

    /// Mean of band k minus k.
    pub fn band_displacement(&self, k: usize) -> Option<f64> {
        let xs: Vec<f64> = self
            .eigenvalues
            .iter()
            .zip(&self.band_assignments)
            .filter(|(_, b)| **b == BandLabel::Band(k))
            .map(|(e, _)| e + self.shift)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64 - k as f64)
    }

    /// max |λ - k| over band k.
    pub fn band_max_displacement(&self, k: usize) -> Option<f64> {
        self.band_ranges()
            .into_iter()
            .find(|r| r.0 == k)
            .map(|r| (r.1 - k as f64).abs().max((r.2 - k as f64).abs()))
    }

    /// c1 = max over bands k ≥ 1 of max |λ - k| / (k J).
    pub fn fit_c1(&self, j: f64) -> f64 {
        let mut c1 = 0.0f64;
        for (e, b) in self.eigenvalues.iter().zip(&self.band_assignments) {
            if let BandLabel::Band(k) = *b {
                if k >= 1 && j > 0.0 {
                    c1 = c1.max(((e + self.shift) - k as f64).abs() / (k as f64 * j));
                }
            }
        }
        c1
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BandVerdict {
    pub within: Vec<bool>,
    /// (k, k_next, gap, required) for bands with J < J_k.
    pub gap_checks: Vec<(usize, usize, f64, bool)>,
    pub passed: bool,
}

/// J_k = 1/(c1 (4k + 2)).
pub fn j_k(c1: f64, k: usize) -> f64 {
    1.0 / (c1 * (4 * k + 2) as f64)
}

/// Checks every eigenvalue against I_k = [k(1 - c1 J) - δ, k(1 + c1 J) + δ]
/// after mapping the lowest eigenvalue to the lower edge -δ of band 0, and the
/// gap ≥ 1/2 between consecutive bands with J < J_k.
pub fn verify_bands(report: &SpectralReport, j: f64, c1: f64, delta: f64) -> BandVerdict {
    let tol = 1e-12;
    let within: Vec<bool> = report
        .eigenvalues
        .iter()
        .zip(&report.band_assignments)
        .map(|(e, b)| match *b {
            BandLabel::Band(k) => {
                let x = e + report.shift - delta;
                let k = k as f64;
                x >= k * (1.0 - c1 * j) - delta - tol && x <= k * (1.0 + c1 * j) + delta + tol
            }
            BandLabel::Unassigned => false,
        })
        .collect();
    let gap_checks: Vec<(usize, usize, f64, bool)> = report
        .gaps
        .iter()
        .map(|g| {
            let required = c1 <= 0.0 || j < j_k(c1, g.k);
            (g.k, g.k_next, g.gap, required)
        })
        .collect();
    let gaps_ok = gap_checks.iter().all(|&(_, _, gap, req)| !req || gap >= 0.5);
    BandVerdict { passed: within.iter().all(|&w| w) && gaps_ok, within, gap_checks }
}

/// Distinct eigenvalues of H0 (projector normalisation), rounded to integers.
pub fn integer_levels(model: &Model) -> Result<Vec<usize>> {
    let vals = linalg::eigvalsh(&model.hamiltonian_dense(Normalization::Projector)?);
    let mut levels: Vec<usize> = vals.iter().map(|v| v.round().max(0.0) as usize).collect();
    levels.dedup();
    Ok(levels)
}

/// Dense H0 + V.
pub fn perturbed_dense(model: &Model, v: &LocalDecomposition) -> Result<CMat> {
    let mut h = model.hamiltonian_dense(Normalization::Projector)?;
    if !v.is_empty() {
        h += v.to_dense(&model.lattice.all_qubits())?;
    }
    Ok(h)
}

#[derive(Clone, Debug, Serialize)]
pub struct RelativeBound {
    /// None when W does not annihilate ker(H0).
    pub b: Option<f64>,
    pub kernel_leak: f64,
    pub kernel_dim: usize,
}

/// Smallest b with W² ≤ b² H0²: b = ‖W H0⁺‖ when W ker(H0) = 0.
pub fn relative_bound(w: &CMat, h0: &CMat) -> RelativeBound {
    let (vals, vecs) = linalg::eigh(h0);
    let top = vals.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let cut = 1e-10 * top.max(1.0);
    let n = h0.nrows();
    let kernel: Vec<usize> = (0..n).filter(|&k| vals[k].abs() <= cut).collect();
    let mut kb = CMat::zeros(n, kernel.len());
    for (j, &k) in kernel.iter().enumerate() {
        kb.set_column(j, &vecs.column(k));
    }
    let leak = if kernel.is_empty() { 0.0 } else { linalg::op_norm(&linalg::matmul(w, &kb)) };
    let scale = linalg::op_norm(w).max(1.0);
    if leak > 1e-10 * scale {
        return RelativeBound { b: None, kernel_leak: leak, kernel_dim: kernel.len() };
    }
    let pinv = linalg::pinv_hermitian(h0, 1e-10);
    let b = linalg::op_norm(&linalg::matmul(w, &pinv));
    RelativeBound { b: Some(b), kernel_leak: leak, kernel_dim: kernel.len() }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContainmentCheck {
    pub applicable: bool,
    pub passed: bool,
    /// Largest distance from an eigenvalue of H0 + W to the union of intervals.
    pub worst_excess: f64,
    pub note: Option<String>,
}

/// Every eigenvalue of H0 + W in ∪ [λ0(1 - b), λ0(1 + b)] (requires b < 1).
pub fn spectrum_containment_check(h0: &CMat, w: &CMat, b: f64) -> ContainmentCheck {
    if !(0.0..1.0).contains(&b) {
        return ContainmentCheck {
            applicable: false,
            passed: false,
            worst_excess: f64::NAN,
            note: Some(format!("relative bound b = {b} is not below 1; containment is not claimed")),
        };
    }
    let mut levels = linalg::eigvalsh(h0);
    levels.dedup_by(|a, b| (*a - *b).abs() <= DEGENERACY_TOL * a.abs().max(1.0));
    let vals = linalg::eigvalsh(&(h0 + w));
    let scale = levels.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
    let mut worst = 0.0f64;
    for e in &vals {
        let d = levels
            .iter()
            .map(|&l| {
                let (lo, hi) = if l >= 0.0 { (l * (1.0 - b), l * (1.0 + b)) } else { (l * (1.0 + b), l * (1.0 - b)) };
                if *e < lo {
                    lo - e
                } else if *e > hi {
                    e - hi
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(d);
    }
    ContainmentCheck { applicable: true, passed: worst <= 1e-9 * scale, worst_excess: worst, note: None }
}

/// Joint eigenvalue pattern of plaquettes and stars; `true` marks a -1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SyndromeSector {
    pub plaquettes: Vec<bool>,
    pub stars: Vec<bool>,
}

impl SyndromeSector {
    pub fn defects(&self) -> usize {
        self.plaquettes.iter().chain(&self.stars).filter(|&&b| b).count()
    }

    pub fn all_plaquettes(n_p: usize, n_s: usize, minus: bool) -> Self {
        SyndromeSector { plaquettes: vec![minus; n_p], stars: vec![false; n_s] }
    }

    pub fn is_uniform(&self) -> Option<bool> {
        let first = *self.plaquettes.first()?;
        self.plaquettes.iter().all(|&b| b == first).then_some(first)
    }
}

/// Sector energies of a toric-type model in the Sign normalisation with
/// V = h Σ_p B_p: E(s) = c(s) + h m(s), linear in h.
#[derive(Clone, Debug)]
pub struct SectorModel {
    pub n_p: usize,
    pub n_s: usize,
    /// Each Z-type generator as the list of plaquettes whose product it is.
    pub z_terms: Vec<Vec<usize>>,
    /// Each X-type generator as a list of stars.
    pub x_terms: Vec<Vec<usize>>,
    pub kind: ModelKind,
    /// States per sector.
    pub degeneracy_log2: usize,
}

impl SectorModel {
    pub fn from_model(model: &Model) -> Result<Self> {
        let lat = &model.lattice;
        if lat.lx != lat.ly || model.kind == ModelKind::Custom {
            return Err(Error::Precondition("sector analysis needs a toric-type model on an L×L torus".into()));
        }
        let l = lat.lx as isize;
        let mut plaq: HashMap<PauliOperator, Vec<usize>> = HashMap::new();
        let mut stars: HashMap<PauliOperator, Vec<usize>> = HashMap::new();
        let bp: Vec<PauliOperator> =
            (0..l).flat_map(|y| (0..l).map(move |x| (x, y))).map(|(x, y)| plaquette(lat, x, y)).collect();
        let st: Vec<PauliOperator> =
            (0..l).flat_map(|y| (0..l).map(move |x| (x, y))).map(|(x, y)| star(lat, x, y)).collect();
        for (i, p) in bp.iter().enumerate() {
            plaq.insert(p.clone(), vec![i]);
            for j in [neighbor(i, l as usize, 1, 0), neighbor(i, l as usize, 0, 1)] {
                if j != i {
                    plaq.entry(p.multiply(&bp[j])?).or_insert_with(|| vec![i.min(j), i.max(j)]);
                }
            }
        }
        for (i, s) in st.iter().enumerate() {
            stars.insert(s.clone(), vec![i]);
        }
        let mut z_terms = vec![];
        let mut x_terms = vec![];
        for g in model.generators() {
            if let Some(ps) = plaq.get(g) {
                z_terms.push(ps.clone());
            } else if let Some(ss) = stars.get(g) {
                x_terms.push(ss.clone());
            } else {
                return Err(Error::Precondition(format!("generator {g} is not a plaquette, a neighbouring pair, or a star")));
            }
        }
        let n_p = bp.len();
        let n_s = st.len();
        Ok(SectorModel {
            n_p,
            n_s,
            z_terms,
            x_terms,
            kind: model.kind,
            degeneracy_log2: model.qubit_count() + 2 - n_p - n_s,
        })
    }

    /// (c, m) with E = c + h m.
    pub fn coefficients(&self, s: &SyndromeSector) -> (f64, f64) {
        let sign = |b: bool| if b { -1.0 } else { 1.0 };
        let mut c = 0.0;
        for t in &self.z_terms {
            c -= t.iter().map(|&p| sign(s.plaquettes[p])).product::<f64>();
        }
        for t in &self.x_terms {
            c -= t.iter().map(|&p| sign(s.stars[p])).product::<f64>();
        }
        let m = s.plaquettes.iter().map(|&b| sign(b)).sum();
        (c, m)
    }

    pub fn energy(&self, s: &SyndromeSector, h: f64) -> f64 {
        let (c, m) = self.coefficients(s);
        c + h * m
    }

    /// Every realisable sector (even number of -1 plaquettes and stars).
    pub fn enumerate(&self) -> Result<Vec<SyndromeSector>> {
        if self.n_p + self.n_s > 36 {
            return Err(Error::ResourceCap {
                what: "sector enumeration".into(),
                dim: 1usize << (self.n_p + self.n_s).min(62),
                cap: 1 << 36,
            });
        }
        let even = |bits: u64, n: usize| -> Option<Vec<bool>> {
            (bits.count_ones() % 2 == 0).then(|| (0..n).map(|i| bits >> i & 1 == 1).collect())
        };
        let ps: Vec<Vec<bool>> = (0..1u64 << self.n_p).filter_map(|b| even(b, self.n_p)).collect();
        let ss: Vec<Vec<bool>> = (0..1u64 << self.n_s).filter_map(|b| even(b, self.n_s)).collect();
        let mut out = Vec::with_capacity(ps.len() * ss.len());
        for p in &ps {
            for s in &ss {
                out.push(SyndromeSector { plaquettes: p.clone(), stars: s.clone() });
            }
        }
        Ok(out)
    }

    /// Lowest sector over plaquette patterns with all stars +1 (stars decouple
    /// from h and every star term is minimised at +1).
    fn exhaustive_ground(&self, h: f64) -> (SyndromeSector, f64, f64) {
        let mut best: Option<(SyndromeSector, f64)> = None;
        let mut second = f64::INFINITY;
        for bits in 0..1u64 << self.n_p {
            if bits.count_ones() % 2 == 1 {
                continue;
            }
            let s = SyndromeSector { plaquettes: (0..self.n_p).map(|i| bits >> i & 1 == 1).collect(), stars: vec![false; self.n_s] };
            let e = self.energy(&s, h);
            match &best {
                Some((_, b)) if e >= *b => second = second.min(e),
                _ => {
                    if let Some((_, b)) = &best {
                        second = second.min(*b);
                    }
                    best = Some((s, e));
                }
            }
        }
        // the cheapest star excitation flips two stars
        let star_cost = if self.n_s >= 2 { 2.0 * 2.0 } else { f64::INFINITY };
        let (s, e) = best.expect("at least the all-+1 sector");
        (s, e, (second - e).min(star_cost))
    }
}

fn neighbor(i: usize, l: usize, dx: usize, dy: usize) -> usize {
    let (x, y) = (i % l, i / l);
    ((y + dy) % l) * l + (x + dx) % l
}

#[derive(Clone, Debug, Serialize)]
pub struct SectorPoint {
    pub h: f64,
    pub ground_energy: f64,
    /// Number of plaquettes with B_p = -1 in the ground sector.
    pub ground_minus_plaquettes: usize,
    /// Energy to the next sector (a lower bound when `exact_gap` is false).
    pub gap: f64,
    pub exact_gap: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SectorSweep {
    pub n_p: usize,
    pub method: String,
    pub points: Vec<SectorPoint>,
    /// First h where the ground sector changes, from the exact linear energies.
    pub crossing: Option<f64>,
}

/// Sweeps V = h Σ_p B_p over the closed-form sector energies (Sign
/// normalisation). Exhaustive for N_p ≤ 16; beyond that, the unstable model's
/// bound (any non-uniform plaquette pattern breaks at least four pair bonds
/// and lies ≥ 6 above the better uniform sector) restricts the ground sector
/// to all +1 or all -1.
pub fn sector_gap_sweep(model: &Model, h_values: &[f64]) -> Result<SectorSweep> {
    let sm = SectorModel::from_model(model)?;
    let exhaustive = sm.n_p <= 16;
    if !exhaustive && sm.kind != ModelKind::UnstableToric {
        return Err(Error::Precondition("closed-form sweep beyond L = 4 is only available for the unstable model".into()));
    }
    let plus = SyndromeSector::all_plaquettes(sm.n_p, sm.n_s, false);
    let minus = SyndromeSector::all_plaquettes(sm.n_p, sm.n_s, true);
    let mut points = vec![];
    let mut prev: Option<SyndromeSector> = None;
    let mut crossing = None;
    for &h in h_values {
        let (s, e, gap, exact) = if exhaustive {
            let (s, e, g) = sm.exhaustive_ground(h);
            (s, e, g, true)
        } else {
            let (ep, em) = (sm.energy(&plus, h), sm.energy(&minus, h));
            let (s, e, other) = if ep <= em { (plus.clone(), ep, em) } else { (minus.clone(), em, ep) };
            (s, e, (other - e).min(6.0), false)
        };
        if let Some(p) = &prev {
            if crossing.is_none() && *p != s {
                let (c1, m1) = sm.coefficients(p);
                let (c2, m2) = sm.coefficients(&s);
                if m1 != m2 {
                    crossing = Some((c2 - c1) / (m1 - m2));
                }
            }
        }
        points.push(SectorPoint {
            h,
            ground_energy: e,
            ground_minus_plaquettes: s.plaquettes.iter().filter(|&&b| b).count(),
            gap,
            exact_gap: exact,
        });
        prev = Some(s);
    }
    Ok(SectorSweep { n_p: sm.n_p, method: if exhaustive { "exhaustive" } else { "uniform-bound" }.into(), points, crossing })
}

/// All sector energies with multiplicity (each sector has 2^k states), sorted.
pub fn sector_spectrum(model: &Model, h: f64) -> Result<Vec<f64>> {
    let sm = SectorModel::from_model(model)?;
    let deg = 1usize << sm.degeneracy_log2;
    let mut out = vec![];
    for s in sm.enumerate()? {
        let e = sm.energy(&s, h);
        out.extend(std::iter::repeat_n(e, deg));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Dense Sign-normalised H + h Σ_p B_p, for comparison with the sector formula.
pub fn sign_hamiltonian_with_field(model: &Model, h: f64) -> Result<CMat> {
    let mut m = model.hamiltonian_dense(Normalization::Sign)?;
    let lat = &model.lattice;
    let all = lat.all_qubits();
    for y in 0..lat.ly as isize {
        for x in 0..lat.lx as isize {
            m += plaquette(lat, x, y).to_matrix(&all)? * C64::new(h, 0.0);
        }
    }
    Ok(m)
}
