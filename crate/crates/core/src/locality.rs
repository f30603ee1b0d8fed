//! Locality tools: Lieb-Robinson commutator growth, the F_μ interaction
//! norm, the filter function, quasi-adiabatic continuation and dressed
//! operators.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::LocalDecomposition;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::{self, CMat, CVec, LocalOperator, C64};

/// Commutator norm defining the arrival of the front.
pub const FRONT_THRESHOLD: f64 = 0.01;
/// Minimum separation between the band and the rest of the spectrum.
pub const MIN_GAP: f64 = 0.5;
pub const UNITARITY_TOL: f64 = 1e-9;
const NORM_TOL: f64 = 1e-8;

/// Spectral data of a dense Hermitian H for repeated time evolution.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub energies: Vec<f64>,
    pub vecs: CMat,
}

impl Evolution {
    pub fn new(h: &CMat) -> Result<Self> {
        linalg::check_dense("time evolution", h.nrows())?;
        let (energies, vecs) = linalg::eigh(h);
        Ok(Evolution { energies, vecs })
    }

    pub fn from_real(h: &DMatrix<f64>) -> Result<Self> {
        linalg::check_dense("time evolution", h.nrows())?;
        let (energies, vecs) = linalg::eigh_real(h);
        Ok(Evolution { energies, vecs: vecs.map(|x| C64::new(x, 0.0)) })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// e^{iHt} O e^{-iHt}.
    pub fn heisenberg(&self, o: &CMat, t: f64) -> CMat {
        let mut m = linalg::matmul3(&self.vecs.adjoint(), o, &self.vecs);
        for j in 0..self.dim() {
            for k in 0..self.dim() {
                m[(j, k)] *= C64::from_polar(1.0, (self.energies[j] - self.energies[k]) * t);
            }
        }
        linalg::matmul3(&self.vecs, &m, &self.vecs.adjoint())
    }
}

/// ‖[O_A(t), O_B]‖ evaluated in the eigenbasis with matrix-free Lanczos.
pub struct CommutatorProbe {
    energies: Vec<f64>,
    a: CMat,
    b: CMat,
    direct: CMat,
    hermitian: bool,
}

impl CommutatorProbe {
    pub fn new(evo: &Evolution, oa: &CMat, ob: &CMat) -> Self {
        let a = linalg::matmul3(&evo.vecs.adjoint(), oa, &evo.vecs);
        let b = linalg::matmul3(&evo.vecs.adjoint(), ob, &evo.vecs);
        let hermitian = linalg::hermiticity_defect(oa) < 1e-12 && linalg::hermiticity_defect(ob) < 1e-12;
        CommutatorProbe { energies: evo.energies.clone(), a, b, direct: linalg::commutator(oa, ob), hermitian }
    }

    pub fn norm(&self, t: f64) -> f64 {
        if t == 0.0 {
            return linalg::op_norm(&self.direct);
        }
        let phase: CVec = CVec::from_iterator(self.energies.len(), self.energies.iter().map(|&e| C64::from_polar(1.0, e * t)));
        let at = |x: &CVec| -> CVec {
            let y = x.zip_map(&phase, |v, p| v * p.conj());
            (&self.a * y).zip_map(&phase, |v, p| v * p)
        };
        let at_adj = |x: &CVec| -> CVec {
            let y = x.zip_map(&phase, |v, p| v * p.conj());
            (self.a.adjoint() * y).zip_map(&phase, |v, p| v * p)
        };
        if self.hermitian {
            // i[A(t), B] is Hermitian
            let ic = |x: &CVec| (at(&(&self.b * x)) - &self.b * at(x)) * linalg::I;
            return linalg::lanczos_norm(self.energies.len(), ic, NORM_TOL);
        }
        let c = |x: &CVec| at(&(&self.b * x)) - &self.b * at(x);
        let c_adj = |x: &CVec| self.b.adjoint() * at_adj(x) - at_adj(&(self.b.adjoint() * x));
        linalg::lanczos_norm(self.energies.len(), |x| c_adj(&c(x)), NORM_TOL).sqrt()
    }
}

/// ‖[e^{iHt} O_A e^{-iHt}, O_B]‖ on the full register `0..n`.
pub fn lr_commutator_norm(h: &CMat, oa: &LocalOperator, ob: &LocalOperator, t: f64) -> Result<f64> {
    if oa.qubits.iter().any(|q| ob.qubits.binary_search(q).is_ok()) {
        return Err(Error::Precondition("O_A and O_B must act on disjoint qubits".into()));
    }
    let n = h.nrows().trailing_zeros() as usize;
    let all: Vec<usize> = (0..n).collect();
    let evo = Evolution::new(h)?;
    let probe = CommutatorProbe::new(&evo, &oa.on(&all)?, &ob.on(&all)?);
    Ok(probe.norm(t))
}

/// First time the probe exceeds `threshold`: a scan with step `dt`, refined
/// by Illinois regula falsi on log‖C(t)‖.
pub fn arrival_time(probe: &CommutatorProbe, threshold: f64, dt: f64, t_max: f64) -> Option<f64> {
    let g = |t: f64| (probe.norm(t).max(1e-300) / threshold).ln();
    let (mut lo, mut glo) = (0.0, f64::NEG_INFINITY);
    let mut t = dt;
    while t <= t_max {
        let gt = g(t);
        if gt > 0.0 {
            let (mut hi, mut ghi) = (t, gt);
            if !glo.is_finite() {
                // norm vanishes at t = 0; bisect once so both ends carry a value
                loop {
                    let mid = 0.5 * (lo + hi);
                    let gm = g(mid);
                    if gm > 0.0 {
                        hi = mid;
                        ghi = gm;
                    } else if gm.is_finite() && gm > -300.0 {
                        lo = mid;
                        glo = gm;
                        break;
                    } else {
                        lo = mid;
                    }
                    if hi - lo < 1e-9 {
                        return Some(hi);
                    }
                }
            }
            let mut side = 0;
            for _ in 0..60 {
                let x = (lo * ghi - hi * glo) / (ghi - glo);
                let gx = g(x);
                if gx.abs() < 1e-9 || hi - lo < 1e-9 * hi {
                    return Some(x);
                }
                if gx > 0.0 {
                    hi = x;
                    ghi = gx;
                    if side == 1 {
                        glo *= 0.5;
                    }
                    side = 1;
                } else {
                    lo = x;
                    glo = gx;
                    if side == -1 {
                        ghi *= 0.5;
                    }
                    side = -1;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        lo = t;
        glo = gt;
        t += dt;
    }
    None
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrontFit {
    pub distances: Vec<usize>,
    pub arrival_times: Vec<f64>,
    /// Inverse slope of arrival time against distance.
    pub velocity: f64,
    pub intercept: f64,
}

/// Least-squares slope and intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Arrival times of [O_A(t), O_B(d)] for each probe O_B at distance d, and the fitted velocity.
pub fn lieb_robinson_front(
    evo: &Evolution,
    oa: &CMat,
    probes: &[(usize, CMat)],
    threshold: f64,
    dt: f64,
    t_max: f64,
) -> Result<FrontFit> {
    let times: Vec<Option<f64>> = probes
        .par_iter()
        .map(|(_, ob)| arrival_time(&CommutatorProbe::new(evo, oa, ob), threshold, dt, t_max))
        .collect();
    let mut distances = vec![];
    let mut arrival_times = vec![];
    for ((d, _), t) in probes.iter().zip(times) {
        match t {
            Some(t) => {
                distances.push(*d);
                arrival_times.push(t);
            }
            None => return Err(Error::NoConvergence(format!("no front arrival at distance {d} before t = {t_max}"))),
        }
    }
    if distances.len() < 2 {
        return Err(Error::Invalid("a front fit needs at least two distances".into()));
    }
    let xs: Vec<f64> = distances.iter().map(|&d| d as f64).collect();
    let (slope, intercept) = linear_fit(&xs, &arrival_times);
    Ok(FrontFit { distances, arrival_times, velocity: 1.0 / slope, intercept })
}

fn single_site(n: usize, q: usize, m: [[f64; 2]; 2]) -> DMatrix<f64> {
    let d = 1usize << n;
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        let b = (i >> q) & 1;
        for c in 0..2 {
            let v = m[c][b];
            if v != 0.0 {
                out[(i & !(1 << q) | (c << q), i)] += v;
            }
        }
    }
    out
}

/// Open mixed-field Ising chain K·Σ (Z_i Z_{i+1} + g X_i + h Z_i), real.
pub fn mixed_field_chain(n: usize, k: f64, g: f64, h: f64) -> Result<DMatrix<f64>> {
    linalg::check_dense("chain Hamiltonian", 1 << n)?;
    let x = [[0.0, 1.0], [1.0, 0.0]];
    let z = [[1.0, 0.0], [0.0, -1.0]];
    let d = 1usize << n;
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for q in 0..n.saturating_sub(1) {
            let s = if ((i >> q) ^ (i >> (q + 1))) & 1 == 0 { 1.0 } else { -1.0 };
            out[(i, i)] += k * s;
        }
    }
    for q in 0..n {
        out += single_site(n, q, x) * (k * g) + single_site(n, q, z) * (k * h);
    }
    Ok(out)
}

/// Z on qubit q of an n-qubit register, dense.
pub fn z_on(n: usize, q: usize) -> CMat {
    single_site(n, q, [[1.0, 0.0], [0.0, -1.0]]).map(|v| C64::new(v, 0.0))
}

fn f_mu(mu: f64, x: f64) -> f64 {
    (-mu * x).exp() / (1.0 + x * x)
}

/// sup_{u,v} Σ_{A ∋ u,v} ‖S_A‖ / F_μ(D(u,v)) with F_μ(x) = e^{-μx}/(1+x²).
pub fn interaction_norm_mu(dec: &LocalDecomposition, mu: f64) -> f64 {
    let lat: &Lattice = &dec.lattice;
    let mut acc: HashMap<((usize, usize), (usize, usize)), f64> = HashMap::new();
    for t in dec.terms() {
        let sites = lat.square_sites(&t.square);
        for &u in &sites {
            for &v in &sites {
                *acc.entry((u, v)).or_insert(0.0) += t.norm;
            }
        }
    }
    acc.into_iter()
        .map(|((u, v), s)| s / f_mu(mu, lat.distance(u, v) as f64))
        .fold(0.0, f64::max)
}

fn phi(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Even C^∞ mask: 0 at ω = 0, exactly 1 for |ω| ≥ 1/2.
pub fn mask(omega: f64) -> f64 {
    let x = 2.0 * omega.abs();
    if x >= 1.0 {
        return 1.0;
    }
    let a = phi(x);
    let b = phi(1.0 - x);
    a / (a + b)
}

/// F̃(ω) = −m(ω)/ω, odd, equal to −1/ω for |ω| ≥ 1/2.
pub fn filter_ft(omega: f64) -> f64 {
    if omega == 0.0 {
        0.0
    } else {
        -mask(omega) / omega
    }
}

/// F(t) = ½ sign t − (1/π) ∫_0^{1/2} (1 − m(ω)) sin(ωt)/ω dω by composite Simpson.
pub fn filter_time(t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let at = t.abs();
    let m = 2 * ((32.0 * at).ceil() as usize).max(64);
    let h = 0.5 / m as f64;
    let g = |w: f64| if w == 0.0 { at } else { (1.0 - mask(w)) * (w * at).sin() / w };
    let mut s = g(0.0) + g(0.5);
    for k in 1..m {
        s += g(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    let v = 0.5 - s * h / 3.0 / std::f64::consts::PI;
    v * t.signum()
}

/// F̃ on a frequency grid and F on a symmetric time grid [−T, T].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterFunction {
    pub span: f64,
    pub resolution: usize,
    pub omega: Vec<f64>,
    pub ft: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl FilterFunction {
    pub fn dt(&self) -> f64 {
        self.span / self.resolution as f64
    }

    /// F̃ realised by the trapezoid rule on the time grid, −2 ∫_0^T F(t) sin(ωt) dt,
    /// with the summed Euler-Maclaurin correction for the jump F(0+) = 1/2.
    pub fn ft_from_grid(&self, omega: f64) -> f64 {
        let dt = self.dt();
        let mid = self.resolution;
        let mut s = 0.0;
        for k in 1..=self.resolution {
            let w = if k == self.resolution { 0.5 } else { 1.0 };
            s += w * self.values[mid + k] * (omega * self.times[mid + k]).sin();
        }
        // Euler-Maclaurin terms of the jump, summed: Σ B_2k/(2k)! h^2k f^(2k-1)(0+)
        let x = omega * dt;
        let jump = if x == 0.0 { 0.0 } else { (1.0 - 0.5 * x / (0.5 * x).tan()) / (2.0 * omega) };
        let integral = dt * s + jump;
        -2.0 * integral
    }

    /// max |F(t)| over T/2 ≤ |t| ≤ T.
    pub fn tail_max(&self) -> f64 {
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| t.abs() >= 0.5 * self.span)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the filter with time step T/resolution.
pub fn build_filter(span: f64, resolution: usize) -> Result<FilterFunction> {
    if !(span > 0.0) || resolution == 0 {
        return Err(Error::Invalid("filter span and resolution must be positive".into()));
    }
    let dt = span / resolution as f64;
    // the trapezoid sum must resolve every frequency up to the width of the
    // spectra it is applied to
    if dt > 0.5 {
        return Err(Error::Invalid(format!("filter time step {dt} is too coarse; need T/resolution ≤ 0.5")));
    }
    let pos: Vec<f64> = (1..=resolution).into_par_iter().map(|k| filter_time(k as f64 * dt)).collect();
    let mut times = Vec::with_capacity(2 * resolution + 1);
    let mut values = Vec::with_capacity(2 * resolution + 1);
    for k in (1..=resolution).rev() {
        times.push(-(k as f64) * dt);
        values.push(-pos[k - 1]);
    }
    times.push(0.0);
    values.push(0.0);
    for k in 1..=resolution {
        times.push(k as f64 * dt);
        values.push(pos[k - 1]);
    }
    let nw = 4 * resolution;
    let omega: Vec<f64> = (0..=2 * nw).map(|k| -2.0 + 2.0 * k as f64 / nw as f64).collect();
    let ft: Vec<f64> = omega.iter().map(|&w| filter_ft(w)).collect();
    let f = FilterFunction { span, resolution, omega, ft, times, values };
    let exact = f
        .omega
        .iter()
        .zip(&f.ft)
        .filter(|(w, _)| w.abs() >= 0.5)
        .map(|(w, v)| (v + 1.0 / w).abs())
        .fold(0.0, f64::max);
    if exact > 1e-12 {
        return Err(Error::NoConvergence(format!("F̃ deviates from −1/ω by {exact:e}")));
    }
    Ok(f)
}

/// H_s = H0 + sV on s ∈ [0, 1].
#[derive(Clone, Debug)]
pub struct ContinuationPath {
    pub h0: CMat,
    pub v: CMat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// exp(D(s_k + Δs/2) Δs), second order.
    Midpoint,
    /// exp(D(s_k) Δs), first order.
    FirstOrder,
}

impl ContinuationPath {
    pub fn new(h0: CMat, v: CMat) -> Result<Self> {
        if h0.shape() != v.shape() || h0.nrows() != h0.ncols() {
            return Err(Error::Invalid("H0 and V must be square matrices of equal size".into()));
        }
        linalg::check_dense("continuation path", h0.nrows())?;
        Ok(ContinuationPath { h0, v })
    }

    pub fn at(&self, s: f64) -> CMat {
        &self.h0 + &self.v * C64::new(s, 0.0)
    }
}

fn generator_from_spectrum(vals: &[f64], vecs: &CMat, v: &CMat, ft: impl Fn(f64) -> f64) -> CMat {
    let mut m = linalg::matmul3(&vecs.adjoint(), v, vecs);
    for j in 0..vals.len() {
        for i in 0..vals.len() {
            m[(j, i)] *= ft(vals[j] - vals[i]);
        }
    }
    linalg::matmul3(vecs, &m, &vecs.adjoint())
}

/// D_s = i ∫ F(t) e^{iH_s t} V e^{-iH_s t} dt with the exact F̃: ⟨j|D|i⟩ = V_ji F̃(E_j − E_i).
pub fn spectral_generator(path: &ContinuationPath, s: f64) -> CMat {
    let (vals, vecs) = linalg::eigh(&path.at(s));
    generator_from_spectrum(&vals, &vecs, &path.v, filter_ft)
}

/// D_s by trapezoid quadrature over the filter's time grid.
pub fn quasi_adiabatic_generator(path: &ContinuationPath, s: f64, filter: &FilterFunction) -> Result<CMat> {
    let (vals, vecs) = linalg::eigh(&path.at(s));
    let width = vals.last().copied().unwrap_or(0.0) - vals.first().copied().unwrap_or(0.0);
    if width * filter.dt() > std::f64::consts::PI {
        return Err(Error::Invalid(format!(
            "filter time step {} cannot resolve a spectral width {width}; refine the grid",
            filter.dt()
        )));
    }
    Ok(generator_from_spectrum(&vals, &vecs, &path.v, |w| filter.ft_from_grid(w)))
}

/// Eigenvalue window of a band: indices start..start+count of the sorted spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandWindow {
    pub start: usize,
    pub count: usize,
}

impl BandWindow {
    /// The k-th cluster of eigenvalues of H0 (levels closer than 1e-8 are merged).
    pub fn from_spectrum(vals: &[f64], k: usize) -> Result<Self> {
        let mut start = 0;
        for band in 0..=k {
            if start >= vals.len() {
                return Err(Error::Invalid(format!("the spectrum has fewer than {} bands", k + 1)));
            }
            let mut end = start + 1;
            while end < vals.len() && vals[end] - vals[end - 1] < 1e-8 {
                end += 1;
            }
            if band == k {
                return Ok(BandWindow { start, count: end - start });
            }
            start = end;
        }
        unreachable!()
    }

    /// Distance from the band to the rest of the spectrum.
    pub fn gap(&self, vals: &[f64]) -> f64 {
        let end = self.start + self.count;
        let below = if self.start > 0 { vals[self.start] - vals[self.start - 1] } else { f64::INFINITY };
        let above = if end < vals.len() { vals[end] - vals[end - 1] } else { f64::INFINITY };
        below.min(above)
    }

    pub fn projector(&self, vecs: &CMat) -> CMat {
        let sub = vecs.columns(self.start, self.count).into_owned();
        linalg::matmul(&sub, &sub.adjoint())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationNode {
    pub s: f64,
    pub deviation: f64,
    pub gap: f64,
    /// Eigenvalues of H_s within 1/4 of the band's H0 energy range.
    pub band_rank: usize,
}

#[derive(Clone, Debug)]
pub struct ContinuationResult {
    pub u: CMat,
    pub max_deviation: f64,
    pub unitarity: f64,
    pub nodes: Vec<ContinuationNode>,
}

/// Integrates U_s along the path and compares U_s P(0) U_s† with P(s) at every node.
pub fn continue_projector(
    path: &ContinuationPath,
    band: &BandWindow,
    steps: usize,
    scheme: Integrator,
) -> Result<ContinuationResult> {
    if steps == 0 {
        return Err(Error::Invalid("continuation needs at least one step".into()));
    }
    let d = path.h0.nrows();
    let ds = 1.0 / steps as f64;
    let (vals0, vecs0) = linalg::eigh(&path.h0);
    let lo = vals0[band.start] - 0.25;
    let hi = vals0[band.start + band.count - 1] + 0.25;
    let p0 = band.projector(&vecs0);
    let node = |s: f64, vals: &[f64], vecs: &CMat, u: &CMat| -> Result<ContinuationNode> {
        let gap = band.gap(vals);
        if gap < MIN_GAP {
            return Err(Error::GapViolation { s, gap });
        }
        let band_rank = vals.iter().filter(|&&e| e >= lo && e <= hi).count();
        let moved = linalg::matmul3(u, &p0, &u.adjoint());
        let deviation = linalg::normal_norm(&(band.projector(vecs) - moved));
        Ok(ContinuationNode { s, deviation, gap, band_rank })
    };
    let mut u = CMat::identity(d, d);
    let mut nodes = vec![node(0.0, &vals0, &vecs0, &u)?];
    let mut current = (vals0, vecs0);
    for k in 0..steps {
        let s = k as f64 * ds;
        let gen = match scheme {
            Integrator::Midpoint => {
                let (gv, gvecs) = linalg::eigh(&path.at(s + 0.5 * ds));
                if band.gap(&gv) < MIN_GAP {
                    return Err(Error::GapViolation { s: s + 0.5 * ds, gap: band.gap(&gv) });
                }
                generator_from_spectrum(&gv, &gvecs, &path.v, filter_ft)
            }
            Integrator::FirstOrder => generator_from_spectrum(&current.0, &current.1, &path.v, filter_ft),
        };
        u = linalg::matmul(&linalg::expm_antihermitian(&(gen * C64::new(ds, 0.0))), &u);
        let s1 = (k + 1) as f64 * ds;
        current = linalg::eigh(&path.at(s1));
        nodes.push(node(s1, &current.0, &current.1, &u)?);
    }
    let unitarity = linalg::op_norm(&(linalg::matmul(&u.adjoint(), &u) - CMat::identity(d, d)));
    if unitarity > UNITARITY_TOL {
        return Err(Error::NonUnitary(unitarity));
    }
    let max_deviation = nodes.iter().map(|n| n.deviation).fold(0.0, f64::max);
    Ok(ContinuationResult { u, max_deviation, unitarity, nodes })
}

/// U O U†.
pub fn dress_operator(o: &CMat, u: &CMat) -> Result<CMat> {
    if o.shape() != u.shape() {
        return Err(Error::Invalid("operator and unitary shapes differ".into()));
    }
    Ok(linalg::matmul3(u, o, &u.adjoint()))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LocalityPoint {
    pub radius: usize,
    pub error: f64,
}

/// ‖O_l − U O U†‖ where O_l keeps the sites within distance l of O's support
/// and replaces the rest by the normalised partial trace (the Haar average).
pub fn dressed_locality_profile(
    lattice: &Lattice,
    o: &LocalOperator,
    u: &CMat,
    radii: &[usize],
) -> Result<Vec<LocalityPoint>> {
    let all = lattice.all_qubits();
    let dressed = dress_operator(&o.on(&all)?, u)?;
    let support = lattice.sites_of_qubits(&o.qubits);
    let hermitian = linalg::hermiticity_defect(&dressed) < 1e-12;
    radii
        .par_iter()
        .map(|&l| {
            let keep: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&q| {
                    let s = lattice.qubit_site(q);
                    support.iter().any(|&a| lattice.distance(a, s) <= l)
                })
                .collect();
            let traced = all.len() - keep.len();
            let error = if traced == 0 {
                0.0
            } else {
                let reduced = linalg::partial_trace(&dressed, &all, &keep)? * C64::new(0.5f64.powi(traced as i32), 0.0);
                let approx = linalg::embed(&reduced, &keep, &all)?;
                let diff = approx - &dressed;
                if hermitian {
                    linalg::normal_norm(&diff)
                } else {
                    linalg::op_norm(&diff)
                }
            };
            Ok(LocalityPoint { radius: l, error })
        })
        .collect()
}
