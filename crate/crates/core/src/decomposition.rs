//! Local decompositions V = Σ_{r,A} V_{r,A} and (J, μ, α) decay classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Square};
use crate::linalg::{self, CMat, LocalOperator, C64};

/// Relative slack allowed when checking a class bound.
pub const CLASS_SLACK: f64 = 1e-12;

/// ‖V_{r,A}‖ · r^α · e^{μ r} ≤ J for every term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayClass {
    #[serde(rename = "J")]
    pub j: f64,
    pub mu: f64,
    pub alpha: f64,
}

impl DecayClass {
    pub fn new(j: f64, mu: f64, alpha: f64) -> Result<Self> {
        if !(j.is_finite() && mu.is_finite() && alpha.is_finite()) || j < 0.0 {
            return Err(Error::Invalid(format!("decay class ({j}, {mu}, {alpha}) is not admissible")));
        }
        Ok(DecayClass { j, mu, alpha })
    }

    /// Largest norm a term on an r×r square may have.
    pub fn envelope(&self, r: usize) -> f64 {
        let r = r as f64;
        self.j * r.powf(-self.alpha) * (-self.mu * r).exp()
    }

    /// Weight r^α e^{μr} multiplying a term norm.
    pub fn weight(mu: f64, alpha: f64, r: usize) -> f64 {
        let r = r as f64;
        r.powf(alpha) * (mu * r).exp()
    }

    pub fn admits(&self, r: usize, norm: f64) -> bool {
        norm * Self::weight(self.mu, self.alpha, r) <= self.j * (1.0 + CLASS_SLACK) + f64::MIN_POSITIVE
    }
}

/// Outcome of checking a decomposition against a claimed class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassCheck {
    pub claimed: DecayClass,
    /// Smallest J for which the terms are (J, μ, α)-decaying.
    pub fitted_j: f64,
    pub passed: bool,
    pub worst_square: Option<Square>,
}

#[derive(Clone, Debug)]
pub struct InteractionTerm {
    pub square: Square,
    pub op: LocalOperator,
    pub norm: f64,
}

impl InteractionTerm {
    fn new(square: Square, op: LocalOperator) -> Self {
        let norm = op.norm();
        InteractionTerm { square, op, norm }
    }
}

/// Terms keyed by square (ordered by r, then anchor). An operator keeps the
/// register it was added on, which is always a subset of its square's qubits.
#[derive(Clone, Debug)]
pub struct LocalDecomposition {
    pub lattice: Lattice,
    terms: BTreeMap<Square, InteractionTerm>,
    pub class: Option<DecayClass>,
}

impl LocalDecomposition {
    pub fn new(lattice: Lattice) -> Self {
        LocalDecomposition { lattice, terms: BTreeMap::new(), class: None }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = &InteractionTerm> {
        self.terms.values()
    }

    pub fn get(&self, a: &Square) -> Option<&InteractionTerm> {
        self.terms.get(a)
    }

    pub fn squares(&self) -> Vec<Square> {
        self.terms.keys().copied().collect()
    }

    /// Adds `op` to the term on `a`. The operator must act inside the square.
    pub fn add(&mut self, a: Square, op: &LocalOperator) -> Result<()> {
        let a = self.lattice.canonical(a.x as isize, a.y as isize, a.r);
        let register = self.lattice.square_qubits(&a);
        if op.qubits.iter().any(|q| register.binary_search(q).is_err()) {
            return Err(Error::Invalid(format!("operator on {:?} is not supported on square {a}", op.qubits)));
        }
        let merged = match self.terms.remove(&a) {
            Some(t) => t.op.add(op)?,
            None => op.clone(),
        };
        self.terms.insert(a, InteractionTerm::new(a, merged));
        Ok(())
    }

    /// Merges every term of `other` into `self`.
    pub fn absorb(&mut self, other: &LocalDecomposition) -> Result<()> {
        for t in other.terms() {
            self.add(t.square, &t.op)?;
        }
        Ok(())
    }

    /// Drops terms whose entries are all below `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, t| !t.op.is_zero(tol));
    }

    pub fn map<F>(&self, mut f: F) -> Result<LocalDecomposition>
    where
        F: FnMut(&InteractionTerm) -> Result<CMat>,
    {
        let mut out = LocalDecomposition::new(self.lattice);
        for t in self.terms() {
            let m = f(t)?;
            out.terms.insert(t.square, InteractionTerm::new(t.square, LocalOperator::new(t.op.qubits.clone(), m)?));
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> LocalDecomposition {
        let mut out = self.map(|t| Ok(&t.op.mat * C64::new(c, 0.0))).expect("same shapes");
        out.class = self.class.map(|k| DecayClass { j: k.j * c.abs(), ..k });
        out
    }

    /// Splits into (terms with r ≤ r_max, the rest).
    pub fn split(&self, r_max: usize) -> (LocalDecomposition, LocalDecomposition) {
        let mut small = LocalDecomposition::new(self.lattice);
        let mut large = LocalDecomposition::new(self.lattice);
        for (k, t) in &self.terms {
            if k.r <= r_max {
                small.terms.insert(*k, t.clone());
            } else {
                large.terms.insert(*k, t.clone());
            }
        }
        (small, large)
    }

    /// Dense sum of all terms on `register` (normally all qubits).
    pub fn to_dense(&self, register: &[usize]) -> Result<CMat> {
        linalg::check_dense("local decomposition", 1usize << register.len())?;
        let d = 1usize << register.len();
        let mut out = CMat::zeros(d, d);
        for t in self.terms() {
            out += t.op.on(register)?;
        }
        Ok(out)
    }

    /// Sum of term norms, an upper bound on the operator norm.
    pub fn norm_bound(&self) -> f64 {
        self.terms().map(|t| t.norm).sum()
    }

    pub fn max_term_norm(&self) -> f64 {
        self.terms().map(|t| t.norm).fold(0.0, f64::max)
    }

    /// Smallest J making the decomposition (J, μ, α)-decaying.
    pub fn fitted_class(&self, mu: f64, alpha: f64) -> DecayClass {
        let j = self.terms().map(|t| t.norm * DecayClass::weight(mu, alpha, t.square.r)).fold(0.0, f64::max);
        DecayClass { j, mu, alpha }
    }

    pub fn check_class(&self, claimed: &DecayClass) -> ClassCheck {
        let mut fitted = 0.0f64;
        let mut worst = None;
        for t in self.terms() {
            let v = t.norm * DecayClass::weight(claimed.mu, claimed.alpha, t.square.r);
            if v > fitted {
                fitted = v;
                worst = Some(t.square);
            }
        }
        ClassCheck {
            claimed: *claimed,
            fitted_j: fitted,
            passed: self.terms().all(|t| claimed.admits(t.square.r, t.norm)),
            worst_square: worst,
        }
    }

    /// Attaches a class after verifying it term by term.
    pub fn claim(&mut self, class: DecayClass) -> Result<()> {
        let check = self.check_class(&class);
        if !check.passed {
            return Err(Error::Invalid(format!(
                "decomposition is not ({}, {}, {})-decaying: needs J ≥ {:.6e} (square {})",
                class.j,
                class.mu,
                class.alpha,
                check.fitted_j,
                check.worst_square.map(|s| s.to_string()).unwrap_or_default()
            )));
        }
        self.class = Some(class);
        Ok(())
    }

    /// Largest deviation from Hermiticity over the terms.
    pub fn hermiticity_defect(&self) -> f64 {
        self.terms().map(|t| linalg::hermiticity_defect(&t.op.mat)).fold(0.0, f64::max)
    }

    pub fn antihermiticity_defect(&self) -> f64 {
        self.terms().map(|t| linalg::antihermiticity_defect(&t.op.mat)).fold(0.0, f64::max)
    }

    /// Operators supported inside square `a` (by square inclusion), summed on `a`'s register.
    pub fn restricted_sum(&self, a: &Square) -> Result<LocalOperator> {
        let register = self.lattice.square_qubits(a);
        let d = 1usize << register.len();
        let mut m = CMat::zeros(d, d);
        for t in self.terms() {
            if self.lattice.square_within(&t.square, a) {
                m += t.op.on(&register)?;
            }
        }
        LocalOperator::new(register, m)
    }
}
