//! Flow-equation block diagonalisation: the superoperator E_A, the series
//! solution of the linearised problem, one flow step H(n) → H(n+1), degree
//! reset and the scalar recursion for (J, J_d, μ, ‖E‖).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{DecayClass, LocalDecomposition};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Model, Normalization, Square};
use crate::linalg::{self, CMat, LocalOperator, C64};
use crate::tqo::default_l_star;

/// Eigenvalues of H0(A) below this fraction of the largest count as kernel.
pub const KERNEL_CUT: f64 = 1e-10;
/// Tolerance on ‖Q_A W_A P_A‖ for block-diagonal terms.
pub const BLOCK_TOL: f64 = 1e-10;
pub const DEFAULT_DEPTH: usize = 8;
pub const DEFAULT_J_MAX: usize = 4;
/// The series stops once a residual improves by less than this factor.
pub const EARLY_STOP_RATIO: f64 = 0.9;
const RESIDUAL_FLOOR: f64 = 1e-14;
/// Above this dimension shell exponentials use the eigenvalue route.
const PADE_MAX_DIM: usize = 256;

/// L* used by the flow. On tiny tori (L ≤ 3) every square is kept local.
pub fn flow_l_star(l: usize) -> usize {
    if l <= 3 {
        l
    } else {
        default_l_star(l)
    }
}

/// Cached spectral data of H0(A) together with the reduced ground state on A.
#[derive(Clone, Debug)]
pub struct LocalSolver {
    pub square: Square,
    pub register: Vec<usize>,
    vals: Vec<f64>,
    vecs: CMat,
    ground: Vec<bool>,
    reduced: CMat,
}

impl LocalSolver {
    pub fn new(model: &Model, a: &Square) -> Result<Self> {
        let h = model.local_hamiltonian(a)?;
        let (vals, vecs) = linalg::eigh(&h.mat);
        let top = vals.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let ground = vals.iter().map(|&x| x.abs() <= KERNEL_CUT * top.max(1.0)).collect();
        let register = h.qubits;
        // Π_A / tr Π_A over G(A) is the ground state reduced to A.
        let sub = model.group().supported_subgroup(&register)?;
        let d = 1usize << register.len();
        let mut pi = CMat::identity(d, d);
        for g in sub.generators() {
            let half = (CMat::identity(d, d) + g.to_matrix(&register)?) * C64::new(0.5, 0.0);
            pi = linalg::matmul(&half, &pi);
        }
        let tr = pi.trace().re;
        let reduced = pi * C64::new(1.0 / tr, 0.0);
        Ok(LocalSolver { square: *a, register, vals, vecs, ground, reduced })
    }

    pub fn dim(&self) -> usize {
        self.vals.len()
    }

    /// P_A on the square's register.
    pub fn ground_projector(&self) -> CMat {
        let cols: Vec<usize> = (0..self.dim()).filter(|&k| self.ground[k]).collect();
        let mut sub = CMat::zeros(self.dim(), cols.len());
        for (j, &k) in cols.iter().enumerate() {
            sub.set_column(j, &self.vecs.column(k));
        }
        linalg::matmul(&sub, &sub.adjoint())
    }

    fn to_eigenbasis(&self, o: &LocalOperator) -> Result<CMat> {
        let m = o.on(&self.register)?;
        Ok(linalg::matmul3(&self.vecs.adjoint(), &m, &self.vecs))
    }

    fn from_eigenbasis(&self, m: &CMat) -> LocalOperator {
        LocalOperator { qubits: self.register.clone(), mat: linalg::matmul3(&self.vecs, m, &self.vecs.adjoint()) }
    }

    /// E_A(O) = Q_A H0(A)⁺ O P_A − P_A O H0(A)⁺ Q_A.
    pub fn e_super(&self, o: &LocalOperator) -> Result<LocalOperator> {
        let mut m = self.to_eigenbasis(o)?;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                m[(i, j)] = match (self.ground[i], self.ground[j]) {
                    (false, true) => m[(i, j)] / self.vals[i],
                    (true, false) => -m[(i, j)] / self.vals[j],
                    _ => C64::new(0.0, 0.0),
                };
            }
        }
        Ok(self.from_eigenbasis(&m))
    }

    /// P_A O P_A + Q_A O Q_A.
    pub fn block_part(&self, o: &LocalOperator) -> Result<LocalOperator> {
        let mut m = self.to_eigenbasis(o)?;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if self.ground[i] != self.ground[j] {
                    m[(i, j)] = C64::new(0.0, 0.0);
                }
            }
        }
        Ok(self.from_eigenbasis(&m))
    }

    /// ‖Q_A O P_A‖.
    pub fn off_block_norm(&self, o: &LocalOperator) -> Result<f64> {
        let m = self.to_eigenbasis(o)?;
        let rows: Vec<usize> = (0..self.dim()).filter(|&k| !self.ground[k]).collect();
        let cols: Vec<usize> = (0..self.dim()).filter(|&k| self.ground[k]).collect();
        if rows.is_empty() || cols.is_empty() {
            return Ok(0.0);
        }
        let block = CMat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])]);
        Ok(linalg::singular_values(&block)[0])
    }

    /// tr(ρ_A O) for the ground state ρ_A reduced to A.
    pub fn ground_expectation(&self, o: &LocalOperator) -> Result<f64> {
        let m = o.on(&self.register)?;
        Ok((0..self.dim()).map(|i| (self.reduced.row(i) * m.column(i))[(0, 0)].re).sum())
    }
}

/// Local solvers keyed by square, built on demand and in parallel.
pub struct SolverCache<'a> {
    model: &'a Model,
    map: BTreeMap<Square, LocalSolver>,
}

impl<'a> SolverCache<'a> {
    pub fn new(model: &'a Model) -> Self {
        SolverCache { model, map: BTreeMap::new() }
    }

    pub fn ensure<I: IntoIterator<Item = Square>>(&mut self, squares: I) -> Result<()> {
        let mut missing: Vec<Square> = squares.into_iter().filter(|s| !self.map.contains_key(s)).collect();
        missing.sort();
        missing.dedup();
        let model = self.model;
        let built: Vec<Result<LocalSolver>> = missing.par_iter().map(|s| LocalSolver::new(model, s)).collect();
        for s in built {
            let s = s?;
            self.map.insert(s.square, s);
        }
        Ok(())
    }

    pub fn get(&self, a: &Square) -> &LocalSolver {
        &self.map[a]
    }
}

/// E_A(O) for an operator supported on A.
pub fn e_super(model: &Model, a: &Square, o: &LocalOperator) -> Result<LocalOperator> {
    LocalSolver::new(model, a)?.e_super(o)
}

/// Every term moved to the square grown by `width` on each side (clipped at
/// Λ), with the class relaxed to (3^α J e^{2μ width}, μ, α).
pub fn pad_boundary(dec: &LocalDecomposition, width: usize) -> Result<LocalDecomposition> {
    let lat = dec.lattice;
    let mut out = LocalDecomposition::new(lat);
    for t in dec.terms() {
        out.add(lat.grow(&t.square, width), &t.op)?;
    }
    if let Some(c) = dec.class {
        let w = width as f64;
        let growth = (1.0 + 2.0 * w).powf(c.alpha.max(0.0));
        out.claim(DecayClass { j: growth * c.j * (2.0 * c.mu * w).exp(), ..c })?;
    }
    Ok(out)
}

/// Padding needed so that a term commutes with every generator term not
/// contained in its padded square.
pub fn padding_width(model: &Model) -> usize {
    model.assignment().iter().map(|s| s.r).max().unwrap_or(1).saturating_sub(1).max(1)
}

/// The covering square for [S_A, V_B]: the first square of size
/// min(p + q, L) containing A ∪ B (and B's neighbours when asked), growing the
/// size when none exists.
pub fn chi(lat: &Lattice, a: &Square, b: &Square, neighbours: bool) -> Square {
    let mut sites = lat.square_sites(a);
    let bb = if neighbours { lat.grow(b, 1) } else { *b };
    sites.extend(lat.square_sites(&bb));
    sites.sort_unstable();
    sites.dedup();
    let r0 = (a.r + b.r).min(lat.size());
    (r0..=lat.size()).find_map(|r| lat.first_square_of_size(r, &sites)).unwrap_or_else(|| lat.full())
}

/// [S, V] distributed over covering squares by `chi`.
pub fn commutator_decomposition(
    s: &LocalDecomposition,
    v: &LocalDecomposition,
    neighbours: bool,
) -> Result<LocalDecomposition> {
    let lat = s.lattice;
    let pairs: Vec<_> = s
        .terms()
        .flat_map(|a| v.terms().map(move |b| (a, b)))
        .filter(|(a, b)| lat.squares_intersect(&a.square, &b.square))
        .collect();
    let parts: Vec<Result<Option<(Square, LocalOperator)>>> = pairs
        .par_iter()
        .map(|(a, b)| {
            let c = a.op.commutator(&b.op)?;
            if c.is_zero(1e-15 * (a.norm * b.norm).max(f64::MIN_POSITIVE)) {
                return Ok(None);
            }
            Ok(Some((chi(&lat, &a.square, &b.square, neighbours), c)))
        })
        .collect();
    let mut out = LocalDecomposition::new(lat);
    for p in parts {
        if let Some((sq, op)) = p? {
            out.add(sq, &op)?;
        }
    }
    Ok(out)
}

/// The H0 terms G_A as a decomposition.
pub fn h0_decomposition(model: &Model) -> Result<LocalDecomposition> {
    let mut dec = LocalDecomposition::new(model.lattice);
    for sq in model.terms().keys() {
        dec.add(*sq, &model.term_operator(sq)?)?;
    }
    Ok(dec)
}

/// Subtracts tr(ρ_A O_A) from every term so each has zero ground expectation.
/// Returns the shifted decomposition and the total shift removed.
pub fn shift_ground_energy(cache: &mut SolverCache, dec: &LocalDecomposition) -> Result<(LocalDecomposition, f64)> {
    cache.ensure(dec.squares())?;
    let mut total = 0.0;
    let mut out = LocalDecomposition::new(dec.lattice);
    for t in dec.terms() {
        let c = cache.get(&t.square).ground_expectation(&t.op)?;
        total += c;
        let id = LocalOperator::identity(t.op.qubits.clone());
        out.add(t.square, &t.op.add(&id.scale(C64::new(-c, 0.0)))?)?;
    }
    Ok((out, total))
}

#[derive(Clone, Debug)]
pub struct LinearizedSolution {
    /// S = Σ_i S^(i).
    pub s: LocalDecomposition,
    pub s_parts: Vec<LocalDecomposition>,
    /// W^(i), term-wise block diagonal.
    pub w_parts: Vec<LocalDecomposition>,
    /// D^(d) = [S^(d), W], the part of [S, H0 + W] + V not in Σ W^(i).
    pub remainder: LocalDecomposition,
    /// V after the ground-energy shift and padding.
    pub v: LocalDecomposition,
    /// Scalar removed from V.
    pub shift: f64,
    /// ‖Q D^(i) P‖ for i = 1..depth used (dense when feasible).
    pub residuals: Vec<f64>,
    pub residual_dense: bool,
}

impl LinearizedSolution {
    pub fn depth(&self) -> usize {
        self.s_parts.len()
    }
}

struct Measure {
    dense: Option<(CMat, CMat)>,
    register: Vec<usize>,
}

impl Measure {
    fn new(model: &Model) -> Result<Self> {
        let register = model.lattice.all_qubits();
        let dense = if linalg::check_dense("residual", model.dim()).is_ok() {
            let p = model.ground_projector_dense()?;
            let q = CMat::identity(p.nrows(), p.nrows()) - &p;
            Some((p, q))
        } else {
            None
        };
        Ok(Measure { dense, register })
    }

    fn off_block(&self, cache: &mut SolverCache, d: &LocalDecomposition) -> Result<f64> {
        match &self.dense {
            Some((p, q)) => Ok(linalg::op_norm(&linalg::matmul3(q, &d.to_dense(&self.register)?, p))),
            None => {
                cache.ensure(d.squares())?;
                d.terms().map(|t| cache.get(&t.square).off_block_norm(&t.op)).sum()
            }
        }
    }
}

fn apply_termwise<F>(cache: &SolverCache, dec: &LocalDecomposition, f: F) -> Result<LocalDecomposition>
where
    F: Fn(&LocalSolver, &LocalOperator) -> Result<LocalOperator> + Sync,
{
    let terms: Vec<_> = dec.terms().collect();
    let mapped: Vec<Result<(Square, LocalOperator)>> =
        terms.par_iter().map(|t| Ok((t.square, f(cache.get(&t.square), &t.op)?))).collect();
    let mut out = LocalDecomposition::new(dec.lattice);
    for m in mapped {
        let (sq, op) = m?;
        out.add(sq, &op)?;
    }
    Ok(out)
}

/// Series solution of Q([S, H0 + W] + V)P = 0 for a term-wise block-diagonal W.
pub fn solve_linearized(
    model: &Model,
    v: &LocalDecomposition,
    w: &LocalDecomposition,
    depth: usize,
) -> Result<LinearizedSolution> {
    if depth == 0 {
        return Err(Error::Invalid("series depth must be at least 1".into()));
    }
    let mut cache = SolverCache::new(model);
    let (shifted, shift) = shift_ground_energy(&mut cache, v)?;
    let mut vp = pad_boundary(&shifted, padding_width(model))?;
    vp.prune(0.0);
    cache.ensure(vp.squares())?;
    let measure = Measure::new(model)?;

    let mut s_parts = vec![apply_termwise(&cache, &vp, |s, o| s.e_super(o))?];
    let mut w_parts = vec![apply_termwise(&cache, &vp, |s, o| s.block_part(o))?];
    let mut residuals: Vec<f64> = vec![];
    let scale = vp.norm_bound().max(f64::MIN_POSITIVE);
    let remainder = loop {
        let i = s_parts.len();
        let d = if w.is_empty() {
            LocalDecomposition::new(model.lattice)
        } else {
            commutator_decomposition(&s_parts[i - 1], w, true)?
        };
        let res = measure.off_block(&mut cache, &d)?;
        let converged = res <= RESIDUAL_FLOOR * scale;
        if let Some(&prev) = residuals.last() {
            if prev > RESIDUAL_FLOOR * scale && res >= prev {
                return Err(Error::Divergence { depth: i, ratio: res / prev });
            }
        }
        let slow = residuals.last().map(|&prev| res > EARLY_STOP_RATIO * prev).unwrap_or(false);
        residuals.push(res);
        if converged || slow || i == depth {
            break d;
        }
        cache.ensure(d.squares())?;
        s_parts.push(apply_termwise(&cache, &d, |s, o| s.e_super(o))?);
        w_parts.push(apply_termwise(&cache, &d, |s, o| s.block_part(o))?);
    };

    let mut s = LocalDecomposition::new(model.lattice);
    for part in &s_parts {
        s.absorb(part)?;
    }
    Ok(LinearizedSolution {
        s,
        s_parts,
        w_parts,
        remainder,
        v: vp,
        shift,
        residuals,
        residual_dense: measure.dense.is_some(),
    })
}

/// W̃ = Σ_i W^(i), with every term checked block diagonal.
pub fn transformed_diagonal(model: &Model, sol: &LinearizedSolution) -> Result<LocalDecomposition> {
    let mut out = LocalDecomposition::new(model.lattice);
    for part in &sol.w_parts {
        out.absorb(part)?;
    }
    let mut cache = SolverCache::new(model);
    cache.ensure(out.squares())?;
    for t in out.terms() {
        let off = cache.get(&t.square).off_block_norm(&t.op)?;
        if off > BLOCK_TOL * t.norm.max(1.0) {
            return Err(Error::NotBlockDiagonal(off));
        }
    }
    Ok(out)
}

/// Per-term shell record of the second-order remainder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellNorm {
    pub term: Square,
    pub shell: usize,
    pub square: Square,
    pub norm: f64,
    /// True for the aggregate of every shell beyond j_max.
    pub aggregate: bool,
}

#[derive(Clone, Debug)]
pub struct Remainder {
    pub dec: LocalDecomposition,
    pub shells: Vec<ShellNorm>,
    /// Shells beyond j_max that could not be formed densely and were dropped.
    pub truncated: bool,
}

fn exp_generator(s: &CMat) -> CMat {
    if s.nrows() <= PADE_MAX_DIM {
        linalg::expm(s)
    } else {
        linalg::expm_antihermitian(s)
    }
}

/// ω(O) = e^S O e^{-S} − O − [S, O] on a register, with S and O given there.
pub fn omega(s: &CMat, o: &CMat) -> CMat {
    let u = exp_generator(s);
    let ud = exp_generator(&(-s));
    linalg::matmul3(&u, o, &ud) - o - linalg::commutator(s, o)
}

/// ω(H) split into shells D_{B_j} = ω_{B_j} − ω_{B_{j−1}} per term H_B, where
/// ω_{B_j} uses only the S terms inside B_j = grow(B, j).
pub fn second_order_remainder(s: &LocalDecomposition, h: &LocalDecomposition, j_max: usize) -> Result<Remainder> {
    let lat = s.lattice;
    let terms: Vec<_> = h.terms().collect();
    let per_term: Vec<Result<(Vec<(Square, LocalOperator)>, Vec<ShellNorm>, bool)>> = terms
        .par_iter()
        .map(|t| {
            let mut ops = vec![];
            let mut shells = vec![];
            let mut prev: Option<LocalOperator> = None;
            let mut truncated = false;
            let mut j = 0;
            loop {
                let last = j == j_max + 1;
                let bj = if last { lat.full() } else { lat.grow(&t.square, j) };
                let register = lat.square_qubits(&bj);
                if last && linalg::check_dense("remainder aggregate", 1 << register.len()).is_err() {
                    truncated = true;
                    break;
                }
                linalg::check_dense("remainder shell", 1 << register.len())?;
                let s_loc = s.restricted_sum(&bj)?;
                let w = omega(&s_loc.mat, &t.op.on(&register)?);
                let d = match &prev {
                    Some(p) => w.clone() - p.on(&register)?,
                    None => w.clone(),
                };
                let d = LocalOperator::new(register.clone(), d)?;
                shells.push(ShellNorm { term: t.square, shell: j, square: bj, norm: d.norm(), aggregate: last });
                ops.push((bj, d));
                prev = Some(LocalOperator::new(register, w)?);
                if lat.is_full(&bj) || last {
                    break;
                }
                j += 1;
            }
            Ok((ops, shells, truncated))
        })
        .collect();
    let mut dec = LocalDecomposition::new(lat);
    let mut shells = vec![];
    let mut truncated = false;
    for r in per_term {
        let (ops, sh, tr) = r?;
        for (sq, op) in ops {
            dec.add(sq, &op)?;
        }
        shells.extend(sh);
        truncated |= tr;
    }
    Ok(Remainder { dec, shells, truncated })
}

/// (J, μ, α) of one named part of the state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartClass {
    pub part: String,
    pub class: DecayClass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowConfig {
    pub l_star: usize,
    pub depth: usize,
    pub j_max: usize,
    /// Decay rate and degree used when fitting reported classes.
    pub mu: f64,
    pub alpha: f64,
}

impl FlowConfig {
    pub fn for_lattice(lat: &Lattice, mu: f64) -> Self {
        FlowConfig { l_star: flow_l_star(lat.size()), depth: DEFAULT_DEPTH, j_max: DEFAULT_J_MAX, mu, alpha: 0.0 }
    }
}

/// H(n) = H0 + Σ_k W(k) + V + E + λ, with H0 in projector normalisation.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub level: usize,
    pub w_parts: Vec<LocalDecomposition>,
    pub v: LocalDecomposition,
    /// Dense E when the lattice is small enough.
    pub e: Option<CMat>,
    pub e_norm: f64,
    pub lambda: f64,
    pub classes: Vec<PartClass>,
}

fn fitted_classes(w_parts: &[LocalDecomposition], v: &LocalDecomposition, mu: f64, alpha: f64) -> Vec<PartClass> {
    let mut out: Vec<PartClass> = w_parts
        .iter()
        .enumerate()
        .map(|(k, w)| PartClass { part: format!("W({})", k + 1), class: w.fitted_class(mu, alpha) })
        .collect();
    out.push(PartClass { part: "V".into(), class: v.fitted_class(mu, alpha) });
    out
}

impl FlowState {
    /// Level-0 state: V's terms above L* start out in E.
    pub fn initial(model: &Model, v: &LocalDecomposition, cfg: &FlowConfig) -> Result<Self> {
        let (small, large) = v.split(cfg.l_star);
        let (e, e_norm) = if large.is_empty() {
            let dense = linalg::check_dense("E", model.dim()).is_ok();
            (dense.then(|| CMat::zeros(model.dim(), model.dim())), 0.0)
        } else if linalg::check_dense("E", model.dim()).is_ok() {
            let m = large.to_dense(&model.lattice.all_qubits())?;
            let n = linalg::op_norm(&m);
            (Some(m), n)
        } else {
            (None, large.norm_bound())
        };
        Ok(FlowState {
            level: 0,
            w_parts: vec![],
            classes: fitted_classes(&[], &small, cfg.mu, cfg.alpha),
            v: small,
            e,
            e_norm,
            lambda: 0.0,
        })
    }

    pub fn w_total(&self) -> Result<LocalDecomposition> {
        let mut w = LocalDecomposition::new(self.v.lattice);
        for part in &self.w_parts {
            w.absorb(part)?;
        }
        Ok(w)
    }

    pub fn hamiltonian_dense(&self, model: &Model) -> Result<CMat> {
        let all = model.lattice.all_qubits();
        let mut h = model.hamiltonian_dense(Normalization::Projector)?;
        h += self.w_total()?.to_dense(&all)?;
        h += self.v.to_dense(&all)?;
        match &self.e {
            Some(e) => h += e,
            None if self.e_norm > 0.0 => {
                return Err(Error::Precondition("E was dropped on a lattice too large for dense storage".into()))
            }
            None => {}
        }
        let d = h.nrows();
        Ok(h + CMat::identity(d, d) * C64::new(self.lambda, 0.0))
    }

    /// ‖Q H(n) P‖ for the unperturbed ground projector P.
    pub fn block_residual(&self, model: &Model) -> Result<f64> {
        let h = self.hamiltonian_dense(model)?;
        let p = model.ground_projector_dense()?;
        let q = CMat::identity(p.nrows(), p.nrows()) - &p;
        Ok(linalg::op_norm(&linalg::matmul3(&q, &h, &p)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub level: usize,
    pub v_class: DecayClass,
    pub w_class: DecayClass,
    /// ‖Q H P‖ after the step, when dense evaluation is feasible.
    pub residual: Option<f64>,
    pub e_norm: f64,
    pub lambda: f64,
    pub series_depth: usize,
    pub series_residuals: Vec<f64>,
    pub truncated: bool,
}

/// One step H(n) → H(n+1) = e^S H(n) e^{-S}, re-split into W(n+1), V(n+1), E(n+1).
pub fn flow_step(model: &Model, state: &FlowState, cfg: &FlowConfig) -> Result<(FlowState, StepReport)> {
    let lat = model.lattice;
    let w = state.w_total()?;
    let sol = solve_linearized(model, &state.v, &w, cfg.depth)?;
    let w_new = transformed_diagonal(model, &sol)?;
    let mut cache = SolverCache::new(model);
    let (mut w_new, w_shift) = shift_ground_energy(&mut cache, &w_new)?;
    w_new.prune(0.0);

    let mut h = h0_decomposition(model)?;
    h.absorb(&w)?;
    h.absorb(&sol.v)?;
    let rem = second_order_remainder(&sol.s, &h, cfg.j_max)?;
    let mut v_new = commutator_decomposition(&sol.s, &sol.v, false)?;
    v_new.absorb(&rem.dec)?;
    v_new.absorb(&sol.remainder)?;
    v_new.prune(1e-15);

    let (w_small, w_large) = w_new.split(cfg.l_star);
    let (v_small, v_large) = v_new.split(cfg.l_star);
    let dense = linalg::check_dense("E", model.dim()).is_ok();
    let (e, e_norm) = if dense {
        let all = lat.all_qubits();
        let mut e = match &state.e {
            Some(e) if !sol.s.is_empty() => {
                let s = sol.s.to_dense(&all)?;
                linalg::matmul3(&linalg::expm_antihermitian(&s), e, &linalg::expm_antihermitian(&(-s)))
            }
            Some(e) => e.clone(),
            None => CMat::zeros(model.dim(), model.dim()),
        };
        e += w_large.to_dense(&all)?;
        e += v_large.to_dense(&all)?;
        let n = linalg::op_norm(&e);
        (Some(e), n)
    } else {
        (None, state.e_norm + w_large.norm_bound() + v_large.norm_bound())
    };

    let mut w_parts = state.w_parts.clone();
    if !w_small.is_empty() {
        w_parts.push(w_small.clone());
    }
    let next = FlowState {
        level: state.level + 1,
        classes: fitted_classes(&w_parts, &v_small, cfg.mu, cfg.alpha),
        w_parts,
        v: v_small,
        e,
        e_norm,
        lambda: state.lambda + sol.shift + w_shift,
    };
    let residual = if dense { Some(next.block_residual(model)?) } else { None };
    let report = StepReport {
        level: next.level,
        v_class: next.v.fitted_class(cfg.mu, cfg.alpha),
        w_class: next.w_total()?.fitted_class(cfg.mu, cfg.alpha),
        residual,
        e_norm,
        lambda: next.lambda,
        series_depth: sol.depth(),
        series_residuals: sol.residuals.clone(),
        truncated: rem.truncated,
    };
    Ok((next, report))
}

/// Trades polynomial degree for exponential decay:
/// (J, μ, α) → ((g/e)^g J^{1−ε}, μ − J^{ε/g}, α + g).
pub fn degree_reset(c: &DecayClass, epsilon: f64, alpha_gain: f64) -> Result<DecayClass> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(alpha_gain > 0.0) {
        return Err(Error::Invalid(format!("need ε in (0,1) and a positive degree gain, got {epsilon}, {alpha_gain}")));
    }
    if c.j == 0.0 {
        return Ok(DecayClass { alpha: c.alpha + alpha_gain, ..*c });
    }
    let cprime = (alpha_gain / std::f64::consts::E).powf(alpha_gain);
    let mu = c.mu - c.j.powf(epsilon / alpha_gain);
    if mu <= 0.0 {
        return Err(Error::DecayExhausted(mu));
    }
    Ok(DecayClass { j: cprime * c.j.powf(1.0 - epsilon), mu, alpha: c.alpha + alpha_gain })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarFlowParams {
    #[serde(rename = "J")]
    pub j: f64,
    pub mu: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub epsilon: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// Prefactor of the L³ term in the E recursion.
    #[serde(default = "one")]
    pub c_e: f64,
    /// Level at which J(n) first drops below this value is reported.
    #[serde(default)]
    pub target: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarPoint {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_d")]
    pub j_d: f64,
    pub mu: f64,
    pub e_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarTrajectory {
    pub points: Vec<ScalarPoint>,
    pub mu_positive: bool,
    pub breakdown_level: Option<usize>,
    pub target_level: Option<usize>,
}

impl ScalarTrajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,J,J_d,mu,E_bound\n");
        for p in &self.points {
            s.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", p.n, p.j, p.j_d, p.mu, p.e_bound));
        }
        s
    }
}

fn check_scalar(p: &ScalarFlowParams) -> Result<()> {
    let ok = p.j >= 0.0
        && p.mu > 0.0
        && p.c1 > 0.0
        && p.c2 > 0.0
        && p.c3 >= 0.0
        && p.c_e >= 0.0
        && p.l > 0.0
        && (0.0..1.0).contains(&p.epsilon)
        && [p.j, p.mu, p.c1, p.c2, p.c3, p.l, p.c_e].iter().all(|x| x.is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!("scalar flow parameters out of range: {p:?}")))
    }
}

/// Iterates the recursion through n_max levels, stopping at the first level
/// whose μ is not positive.
pub fn scalar_trajectory(p: &ScalarFlowParams, n_max: usize) -> Result<ScalarTrajectory> {
    check_scalar(p)?;
    let mut pt = ScalarPoint { n: 0, j: p.j, j_d: 0.0, mu: p.mu, e_bound: 0.0 };
    let mut points = vec![pt];
    let mut breakdown = None;
    let below = |j: f64| p.target.map(|t| j < t).unwrap_or(false);
    let mut target_level = below(pt.j).then_some(0);
    for n in 1..=n_max {
        let j = p.c1 * pt.j.powf(2.0 * (1.0 - p.epsilon));
        let j_d = p.c2 * pt.j.powf(1.0 - p.epsilon);
        let pull = if j == 0.0 { 0.0 } else { p.c3 * j.powf(p.epsilon / 10.0) };
        let mu = pt.mu / 2.0 - pull;
        let e_bound = pt.e_bound + p.c_e * p.l.powi(3) * pt.j * (-p.c3 * p.l * pt.mu).exp();
        pt = ScalarPoint { n, j, j_d, mu, e_bound };
        points.push(pt);
        if target_level.is_none() && below(j) {
            target_level = Some(n);
        }
        if mu <= 0.0 {
            breakdown = Some(n);
            break;
        }
    }
    Ok(ScalarTrajectory { points, mu_positive: breakdown.is_none(), breakdown_level: breakdown, target_level })
}

/// Like `scalar_trajectory`, but a non-positive μ is an error.
pub fn scalar_flow(p: &ScalarFlowParams, n_max: usize) -> Result<ScalarTrajectory> {
    let t = scalar_trajectory(p, n_max)?;
    match t.breakdown_level {
        Some(k) => Err(Error::FlowBreakdown(k)),
        None => Ok(t),
    }
}

/// Largest J in [0, j_hi] for which μ stays positive through n_max levels, by bisection.
pub fn scalar_threshold(p: &ScalarFlowParams, n_max: usize, j_hi: f64, tol: f64) -> Result<f64> {
    let survives = |j: f64| -> Result<bool> {
        Ok(scalar_trajectory(&ScalarFlowParams { j, ..p.clone() }, n_max)?.mu_positive)
    };
    if !survives(0.0)? {
        return Ok(0.0);
    }
    if survives(j_hi)? {
        return Ok(j_hi);
    }
    let (mut lo, mut hi) = (0.0, j_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if survives(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// J(n) of J(k+1) = J(k)²/J0, i.e. J0 (J/J0)^{2^n} = J (J/J0)^{2^n − 1}.
pub fn closed_form_j(j: f64, j0: f64, n: usize) -> f64 {
    j * (j / j0).powf(2f64.powi(n as i32) - 1.0)
}
