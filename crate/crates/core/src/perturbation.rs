//! Perturbation specs: JSON-serialisable lists of local terms with a claimed
//! decay class, and a seeded random generator for them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decomposition::{DecayClass, LocalDecomposition};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Layout, Square};
use crate::linalg::{self, CMat, LocalOperator, C64};
use crate::pauli::PauliOperator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub coeff: f64,
    /// Text form, e.g. "+1 X3 Z7".
    pub pauli: String,
}

/// Row-major dense block on the square's sorted qubit register.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEntry {
    pub square: Square,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paulis: Vec<PauliTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<DenseBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ly: Option<usize>,
    pub layout: Layout,
    /// Overall strength J of the claimed class.
    #[serde(rename = "J")]
    pub j: f64,
    pub mu: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub entries: Vec<PerturbationEntry>,
}

impl PerturbationSpec {
    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.l, self.ly.unwrap_or(self.l), self.layout)
    }

    pub fn claimed_class(&self) -> Result<DecayClass> {
        DecayClass::new(self.j, self.mu, self.alpha)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("perturbation spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable spec")
    }

    /// Materialises the terms and verifies the claimed class.
    pub fn to_decomposition(&self) -> Result<LocalDecomposition> {
        let lattice = self.lattice()?;
        let n = lattice.qubit_count();
        let mut dec = LocalDecomposition::new(lattice);
        for (k, e) in self.entries.iter().enumerate() {
            let sq = lattice.canonical(e.square.x as isize, e.square.y as isize, e.square.r);
            if e.square.r == 0 || e.square.r > lattice.size() {
                return Err(Error::Invalid(format!("entry {k}: square {} does not exist", e.square)));
            }
            let register = lattice.square_qubits(&sq);
            let d = 1usize << register.len();
            let mut m = CMat::zeros(d, d);
            for t in &e.paulis {
                let p = PauliOperator::parse(&t.pauli, n).map_err(|err| Error::Parse(format!("entry {k}: {err}")))?;
                if p.support().iter().any(|q| register.binary_search(q).is_err()) {
                    return Err(Error::Invalid(format!("entry {k}: {} leaves square {sq}", t.pauli)));
                }
                m += p.to_matrix(&register)? * C64::new(t.coeff, 0.0);
            }
            if let Some(b) = &e.block {
                if b.re.len() != d * d || b.im.len() != d * d {
                    return Err(Error::Invalid(format!("entry {k}: block needs {} entries", d * d)));
                }
                m += CMat::from_fn(d, d, |i, j| C64::new(b.re[i * d + j], b.im[i * d + j]));
            }
            if linalg::hermiticity_defect(&m) > 1e-12 {
                return Err(Error::Invalid(format!("entry {k}: term is not Hermitian")));
            }
            dec.add(sq, &LocalOperator::new(register, m)?)?;
        }
        dec.claim(self.claimed_class()?)?;
        Ok(dec)
    }
}

/// GUE sample on dimension d, Hermitian.
pub fn gue(rng: &mut ChaCha8Rng, d: usize) -> CMat {
    let g = CMat::from_fn(d, d, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

/// Hermitian random terms on every r×r square with r ≤ q, each of norm exactly J e^{-μ r}.
pub fn random_perturbation(lattice: &Lattice, seed: u64, q: usize, j: f64, mu: f64) -> Result<PerturbationSpec> {
    if q == 0 || q > lattice.size() {
        return Err(Error::Precondition(format!("locality q = {q} must lie in 1..={}", lattice.size())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = vec![];
    if j > 0.0 {
        for r in 1..=q {
            let target = j * (-mu * r as f64).exp();
            for sq in lattice.squares(r) {
                let d = 1usize << lattice.square_qubits(&sq).len();
                let h = gue(&mut rng, d);
                let h = &h * C64::new(target / linalg::op_norm(&h), 0.0);
                entries.push(PerturbationEntry {
                    square: sq,
                    paulis: vec![],
                    block: Some(DenseBlock {
                        re: (0..d * d).map(|k| h[(k / d, k % d)].re).collect(),
                        im: (0..d * d).map(|k| h[(k / d, k % d)].im).collect(),
                    }),
                });
            }
        }
    }
    Ok(PerturbationSpec {
        l: lattice.lx,
        ly: (lattice.ly != lattice.lx).then_some(lattice.ly),
        layout: lattice.layout,
        j: j.max(0.0),
        mu,
        alpha: 0.0,
        seed: Some(seed),
        entries,
    })
}

/// The decomposition of `random_perturbation` without the JSON round trip.
pub fn random_decomposition(lattice: &Lattice, seed: u64, q: usize, j: f64, mu: f64) -> Result<LocalDecomposition> {
    random_perturbation(lattice, seed, q, j, mu)?.to_decomposition()
}
