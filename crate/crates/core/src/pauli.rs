//! Pauli strings in the symplectic representation `i^λ X^x Z^z` and stabilizer groups.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64, ZERO};

fn words(n: usize) -> usize {
    n.div_ceil(64)
}

fn get(bits: &[u64], q: usize) -> bool {
    bits[q / 64] >> (q % 64) & 1 == 1
}

fn flip(bits: &mut [u64], q: usize) {
    bits[q / 64] ^= 1 << (q % 64);
}

fn dot(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

fn xor_into(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn is_zero(bits: &[u64]) -> bool {
    bits.iter().all(|&w| w == 0)
}

/// Pauli operator `i^phase X^x Z^z` on `n` qubits.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct PauliOperator {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    phase: u8,
}

impl PauliOperator {
    pub fn identity(n: usize) -> Self {
        PauliOperator { n, x: vec![0; words(n)], z: vec![0; words(n)], phase: 0 }
    }

    /// Builds `coefficient * ⊗ letters` where the coefficient is `i^coeff_exp`.
    pub fn from_letters(n: usize, letters: &[(usize, char)], coeff_exp: u8) -> Result<Self> {
        let mut p = PauliOperator::identity(n);
        let mut phase = coeff_exp % 4;
        for &(q, c) in letters {
            if q >= n {
                return Err(Error::Parse(format!("qubit {q} out of range for {n} qubits")));
            }
            if get(&p.x, q) || get(&p.z, q) {
                return Err(Error::Parse(format!("qubit {q} appears twice")));
            }
            match c.to_ascii_uppercase() {
                'I' => {}
                'X' => flip(&mut p.x, q),
                'Z' => flip(&mut p.z, q),
                'Y' => {
                    // Y = i X Z
                    flip(&mut p.x, q);
                    flip(&mut p.z, q);
                    phase = (phase + 1) % 4;
                }
                other => return Err(Error::Parse(format!("unknown Pauli letter '{other}'"))),
            }
        }
        p.phase = phase;
        Ok(p)
    }

    pub fn x_on(n: usize, qubits: &[usize]) -> Self {
        let mut p = PauliOperator::identity(n);
        for &q in qubits {
            flip(&mut p.x, q);
        }
        p
    }

    pub fn z_on(n: usize, qubits: &[usize]) -> Self {
        let mut p = PauliOperator::identity(n);
        for &q in qubits {
            flip(&mut p.z, q);
        }
        p
    }

    /// Parses `"<phase> <letter><qubit> ..."`, e.g. `"+1 X3 Z7"` or `"-i Y0"`.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let mut tokens = text.split_whitespace().peekable();
        let mut coeff = 0u8;
        if let Some(&first) = tokens.peek() {
            if let Some(c) = parse_coefficient(first) {
                coeff = c;
                tokens.next();
            }
        }
        let mut letters = Vec::new();
        for tok in tokens {
            let mut chars = tok.chars();
            let letter = chars.next().ok_or_else(|| Error::Parse("empty token".into()))?;
            let q: usize = chars
                .as_str()
                .parse()
                .map_err(|_| Error::Parse(format!("bad qubit id in '{tok}'")))?;
            letters.push((q, letter));
        }
        PauliOperator::from_letters(n, &letters, coeff)
    }

    /// Parses with the qubit count taken from the largest id.
    pub fn parse_auto(text: &str) -> Result<Self> {
        let mut n = 0;
        for tok in text.split_whitespace() {
            if parse_coefficient(tok).is_some() {
                continue;
            }
            if let Ok(q) = tok[1..].parse::<usize>() {
                n = n.max(q + 1);
            }
        }
        PauliOperator::parse(text, n)
    }

    pub fn qubit_count(&self) -> usize {
        self.n
    }

    /// Exponent λ in `i^λ X^x Z^z`.
    pub fn phase_exponent(&self) -> u8 {
        self.phase
    }

    pub fn x_bit(&self, q: usize) -> bool {
        get(&self.x, q)
    }

    pub fn z_bit(&self, q: usize) -> bool {
        get(&self.z, q)
    }

    pub fn x_words(&self) -> &[u64] {
        &self.x
    }

    pub fn z_words(&self) -> &[u64] {
        &self.z
    }

    pub fn weight(&self) -> usize {
        self.x.iter().zip(&self.z).map(|(a, b)| (a | b).count_ones() as usize).sum()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.n).filter(|&q| self.x_bit(q) || self.z_bit(q)).collect()
    }

    pub fn is_identity_up_to_phase(&self) -> bool {
        is_zero(&self.x) && is_zero(&self.z)
    }

    /// Number of Y letters, i.e. |x ∧ z|.
    fn y_count(&self) -> u32 {
        dot(&self.x, &self.z)
    }

    /// Hermitian iff `i^{2λ} = (-1)^{x·z}`, i.e. λ ≡ x·z (mod 2).
    pub fn is_hermitian(&self) -> bool {
        (self.phase as u32 + self.y_count()) % 2 == 0
    }

    /// Overall coefficient in front of the letter string, as a power of i.
    pub fn coefficient_exponent(&self) -> u8 {
        ((self.phase as u32 + 4 * self.n as u32 - self.y_count()) % 4) as u8
    }

    pub fn coefficient(&self) -> C64 {
        phase_value(self.coefficient_exponent())
    }

    pub fn negate(&self) -> Self {
        let mut p = self.clone();
        p.phase = (p.phase + 2) % 4;
        p
    }

    pub fn with_phase_exponent(&self, lambda: u8) -> Self {
        let mut p = self.clone();
        p.phase = lambda % 4;
        p
    }

    fn same_size(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::QubitMismatch(self.n, other.n));
        }
        Ok(())
    }

    /// Group product with exact phase.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        self.same_size(other)?;
        Ok(self.mul_unchecked(other))
    }

    fn mul_unchecked(&self, other: &Self) -> Self {
        // X^a Z^b X^c Z^d = (-1)^{b·c} X^{a+c} Z^{b+d}
        let sign = dot(&self.z, &other.x) % 2;
        let phase = ((self.phase as u32 + other.phase as u32 + 2 * sign) % 4) as u8;
        let mut x = self.x.clone();
        let mut z = self.z.clone();
        xor_into(&mut x, &other.x);
        xor_into(&mut z, &other.z);
        PauliOperator { n: self.n, x, z, phase }
    }

    /// Symplectic form vanishes.
    pub fn commutes(&self, other: &Self) -> Result<bool> {
        self.same_size(other)?;
        Ok(self.commutes_unchecked(other))
    }

    fn commutes_unchecked(&self, other: &Self) -> bool {
        (dot(&self.x, &other.z) + dot(&self.z, &other.x)) % 2 == 0
    }

    /// True if the support lies inside `region` (given as a qubit mask).
    pub fn supported_in(&self, mask: &[u64]) -> bool {
        self.x.iter().zip(&self.z).zip(mask).all(|((a, b), m)| (a | b) & !m == 0)
    }

    /// Dense matrix on the sorted register `qubits`, which must contain the support.
    pub fn to_matrix(&self, qubits: &[usize]) -> Result<CMat> {
        for q in self.support() {
            if qubits.binary_search(&q).is_err() {
                return Err(Error::Invalid(format!("support qubit {q} outside register")));
            }
        }
        let k = qubits.len();
        let dim = 1usize << k;
        let mut xm = 0usize;
        let mut zm = 0usize;
        for (b, &q) in qubits.iter().enumerate() {
            if self.x_bit(q) {
                xm |= 1 << b;
            }
            if self.z_bit(q) {
                zm |= 1 << b;
            }
        }
        let c = phase_value(self.phase);
        let mut m = CMat::zeros(dim, dim);
        for b in 0..dim {
            let sign = if (zm & b).count_ones() % 2 == 1 { -c } else { c };
            m[(b ^ xm, b)] = sign;
        }
        Ok(m)
    }

    /// Applies the operator to a state on all `n` qubits.
    pub fn apply(&self, v: &[C64], out: &mut [C64]) {
        let (xm, zm) = self.masks();
        let c = phase_value(self.phase);
        for (b, &amp) in v.iter().enumerate() {
            if amp == ZERO {
                continue;
            }
            let s = if (zm & b as u64).count_ones() % 2 == 1 { -c } else { c };
            out[b ^ xm as usize] += s * amp;
        }
    }

    /// Bit masks over all qubits; requires n ≤ 64.
    pub fn masks(&self) -> (u64, u64) {
        assert!(self.n <= 64, "dense state application needs at most 64 qubits");
        (self.x.first().copied().unwrap_or(0), self.z.first().copied().unwrap_or(0))
    }

    /// Concatenated (x | z) symplectic vector.
    fn symplectic(&self) -> Vec<u64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.z);
        v
    }
}

fn parse_coefficient(tok: &str) -> Option<u8> {
    match tok {
        "+1" | "1" | "+" => Some(0),
        "-1" | "-" => Some(2),
        "+i" | "i" | "+1i" => Some(1),
        "-i" | "-1i" => Some(3),
        _ => None,
    }
}

pub fn phase_value(lambda: u8) -> C64 {
    match lambda % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

impl fmt::Display for PauliOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let coeff = match self.coefficient_exponent() {
            0 => "+1",
            1 => "+i",
            2 => "-1",
            _ => "-i",
        };
        write!(f, "{coeff}")?;
        for q in 0..self.n {
            let letter = match (self.x_bit(q), self.z_bit(q)) {
                (false, false) => continue,
                (true, false) => 'X',
                (false, true) => 'Z',
                (true, true) => 'Y',
            };
            write!(f, " {letter}{q}")?;
        }
        Ok(())
    }
}

/// Qubit mask for a set of qubit ids.
pub fn region_mask(n: usize, region: &[usize]) -> Vec<u64> {
    let mut m = vec![0u64; words(n)];
    for &q in region {
        if q < n {
            m[q / 64] |= 1 << (q % 64);
        }
    }
    m
}

/// Row-echelon form over GF(2) of generator symplectic vectors, each row
/// remembering which generators were combined into it.
#[derive(Clone, Debug)]
struct Echelon {
    rows: Vec<Vec<u64>>,
    combos: Vec<Vec<u64>>,
    pivots: Vec<usize>,
}

impl Echelon {
    /// Eliminates `vectors`; returns the echelon and the generator combinations
    /// that reduce to zero (a basis of the left kernel).
    fn build(vectors: &[Vec<u64>], m: usize) -> (Echelon, Vec<Vec<u64>>) {
        let mut ech = Echelon { rows: vec![], combos: vec![], pivots: vec![] };
        let mut kernel = Vec::new();
        for (k, v) in vectors.iter().enumerate() {
            let mut row = v.clone();
            let mut combo = vec![0u64; words(m)];
            flip(&mut combo, k);
            ech.reduce(&mut row, &mut combo);
            match first_bit(&row) {
                Some(p) => {
                    ech.rows.push(row);
                    ech.combos.push(combo);
                    ech.pivots.push(p);
                }
                None => kernel.push(combo),
            }
        }
        (ech, kernel)
    }

    fn reduce(&self, row: &mut [u64], combo: &mut [u64]) {
        for ((r, c), &p) in self.rows.iter().zip(&self.combos).zip(&self.pivots) {
            if get(row, p) {
                xor_into(row, r);
                xor_into(combo, c);
            }
        }
    }
}

fn first_bit(v: &[u64]) -> Option<usize> {
    v.iter().enumerate().find(|(_, &w)| w != 0).map(|(i, &w)| i * 64 + w.trailing_zeros() as usize)
}

/// Abelian group generated by commuting Hermitian Pauli operators, not containing -I.
#[derive(Clone, Debug)]
pub struct StabilizerGroup {
    n: usize,
    generators: Vec<PauliOperator>,
    echelon: Echelon,
}

impl StabilizerGroup {
    pub fn new(n: usize, generators: Vec<PauliOperator>) -> Result<Self> {
        for g in &generators {
            if g.qubit_count() != n {
                return Err(Error::QubitMismatch(g.qubit_count(), n));
            }
            if !g.is_hermitian() {
                return Err(Error::Invalid(format!("generator {g} is not Hermitian")));
            }
        }
        for (a, ga) in generators.iter().enumerate() {
            for gb in &generators[a + 1..] {
                if !ga.commutes_unchecked(gb) {
                    return Err(Error::Invalid(format!("generators {ga} and {gb} anticommute")));
                }
            }
        }
        let vecs: Vec<Vec<u64>> = generators.iter().map(|g| g.symplectic()).collect();
        let (echelon, kernel) = Echelon::build(&vecs, generators.len());
        let group = StabilizerGroup { n, generators, echelon };
        for combo in kernel {
            let prod = group.product_of(&combo);
            if prod.phase != 0 {
                return Err(Error::Invalid("generators produce -I".into()));
            }
        }
        Ok(group)
    }

    pub fn trivial(n: usize) -> Self {
        StabilizerGroup::new(n, vec![]).expect("empty group is valid")
    }

    pub fn qubit_count(&self) -> usize {
        self.n
    }

    pub fn generators(&self) -> &[PauliOperator] {
        &self.generators
    }

    /// Number of independent generators.
    pub fn rank(&self) -> usize {
        self.echelon.rows.len()
    }

    fn product_of(&self, combo: &[u64]) -> PauliOperator {
        let mut p = PauliOperator::identity(self.n);
        for (k, g) in self.generators.iter().enumerate() {
            if get(combo, k) {
                p = p.mul_unchecked(g);
            }
        }
        p
    }

    fn decompose(&self, p: &PauliOperator) -> Option<Vec<u64>> {
        let mut row = p.symplectic();
        let mut combo = vec![0u64; words(self.generators.len())];
        self.echelon.reduce(&mut row, &mut combo);
        if is_zero(&row) {
            Some(combo)
        } else {
            None
        }
    }

    /// Membership with exact phase.
    pub fn contains(&self, p: &PauliOperator) -> Result<bool> {
        if p.qubit_count() != self.n {
            return Err(Error::QubitMismatch(p.qubit_count(), self.n));
        }
        Ok(match self.decompose(p) {
            Some(combo) => self.product_of(&combo) == *p,
            None => false,
        })
    }

    /// Membership up to a phase.
    pub fn contains_up_to_phase(&self, p: &PauliOperator) -> Result<bool> {
        if p.qubit_count() != self.n {
            return Err(Error::QubitMismatch(p.qubit_count(), self.n));
        }
        Ok(self.decompose(p).is_some())
    }

    /// Every generator of `self` lies in `other` (phase-aware).
    pub fn is_subgroup_of(&self, other: &StabilizerGroup) -> Result<bool> {
        for g in &self.generators {
            if !other.contains(g)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// First generator of `self` not contained in `other`.
    pub fn first_outside(&self, other: &StabilizerGroup) -> Result<Option<PauliOperator>> {
        for g in &self.generators {
            if !other.contains(g)? {
                return Ok(Some(g.clone()));
            }
        }
        Ok(None)
    }

    /// G(region): all group elements supported in `region`.
    pub fn supported_subgroup(&self, region: &[usize]) -> Result<StabilizerGroup> {
        let mask = region_mask(self.n, region);
        let outside: Vec<Vec<u64>> = self
            .generators
            .iter()
            .map(|g| {
                let mut v = g.symplectic();
                let w = words(self.n);
                for i in 0..w {
                    v[i] &= !mask[i];
                    v[w + i] &= !mask[i];
                }
                v
            })
            .collect();
        let (_, kernel) = Echelon::build(&outside, self.generators.len());
        let mut elems: Vec<PauliOperator> = kernel
            .iter()
            .map(|c| self.product_of(c))
            .filter(|p| !p.is_identity_up_to_phase())
            .collect();
        prune_dependent(&mut elems);
        StabilizerGroup::new(self.n, elems)
    }

    /// G_region: subgroup generated by declared generators supported in `region`.
    pub fn generated_subgroup(&self, region: &[usize]) -> Result<StabilizerGroup> {
        let mask = region_mask(self.n, region);
        let gens = self.generators.iter().filter(|g| g.supported_in(&mask)).cloned().collect();
        StabilizerGroup::new(self.n, gens)
    }

    /// Lists every group element, for tiny groups only.
    pub fn enumerate(&self) -> Vec<PauliOperator> {
        let m = self.generators.len();
        assert!(m <= 24, "enumeration is for small groups");
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for mask in 0u64..(1u64 << m) {
            let mut p = PauliOperator::identity(self.n);
            for k in 0..m {
                if mask >> k & 1 == 1 {
                    p = p.mul_unchecked(&self.generators[k]);
                }
            }
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
        out
    }
}

/// Drops elements that are products of earlier ones (up to phase).
fn prune_dependent(elems: &mut Vec<PauliOperator>) {
    let mut ech = Echelon { rows: vec![], combos: vec![], pivots: vec![] };
    let mut kept = Vec::new();
    for p in elems.drain(..) {
        let mut row = p.symplectic();
        let mut combo = vec![0u64; 1];
        ech.reduce(&mut row, &mut combo);
        if let Some(piv) = first_bit(&row) {
            ech.rows.push(row);
            ech.combos.push(vec![0u64; 1]);
            ech.pivots.push(piv);
            kept.push(p);
        }
    }
    *elems = kept;
}

/// Result of a distance search.
#[derive(Clone, Debug)]
pub struct DistanceResult {
    pub distance: Option<usize>,
    pub logical: Option<PauliOperator>,
    pub cutoff: usize,
}

/// Smallest weight ≤ `cutoff` of a Pauli commuting with every generator but not in the group (phase ignored).
pub fn minimum_distance(g: &StabilizerGroup, cutoff: usize) -> Result<DistanceResult> {
    if cutoff == 0 {
        return Err(Error::Precondition("weight cutoff must be at least 1".into()));
    }
    let n = g.qubit_count();
    let m = g.generators().len();
    let gw = words(m);
    // per qubit: which generators have an X part / Z part there
    let mut col_x = vec![vec![0u64; gw]; n];
    let mut col_z = vec![vec![0u64; gw]; n];
    for (k, gen) in g.generators().iter().enumerate() {
        for q in 0..n {
            if gen.x_bit(q) {
                flip(&mut col_x[q], k);
            }
            if gen.z_bit(q) {
                flip(&mut col_z[q], k);
            }
        }
    }
    for w in 1..=cutoff.min(n) {
        let supports = combinations(n, w);
        let found = supports
            .par_iter()
            .find_map_first(|sup| search_support(g, sup, &col_x, &col_z, gw));
        if let Some(p) = found {
            return Ok(DistanceResult { distance: Some(w), logical: Some(p), cutoff });
        }
    }
    Ok(DistanceResult { distance: None, logical: None, cutoff })
}

fn search_support(
    g: &StabilizerGroup,
    sup: &[usize],
    col_x: &[Vec<u64>],
    col_z: &[Vec<u64>],
    gw: usize,
) -> Option<PauliOperator> {
    let w = sup.len();
    let total = 3usize.pow(w as u32);
    let mut syndrome = vec![0u64; gw];
    for code in 0..total {
        syndrome.iter_mut().for_each(|s| *s = 0);
        let mut c = code;
        let mut letters = Vec::with_capacity(w);
        for &q in sup {
            let letter = c % 3;
            c /= 3;
            // 0 = X, 1 = Z, 2 = Y
            if letter != 1 {
                xor_into(&mut syndrome, &col_z[q]);
            }
            if letter != 0 {
                xor_into(&mut syndrome, &col_x[q]);
            }
            letters.push((q, ['X', 'Z', 'Y'][letter]));
        }
        if !is_zero(&syndrome) {
            continue;
        }
        let p = PauliOperator::from_letters(g.qubit_count(), &letters, 0).ok()?;
        if g.decompose(&p).is_none() {
            return Some(p);
        }
    }
    None
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 && idx[0] == n - k {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    #[test]
    fn text_round_trip() {
        let p = PauliOperator::parse("+1 X3 Z7", 8).unwrap();
        assert_eq!(p.to_string(), "+1 X3 Z7");
        let y = PauliOperator::parse("-i Y0 X2", 3).unwrap();
        assert_eq!(y.to_string(), "-i Y0 X2");
        assert!(PauliOperator::parse("+1 Q2", 3).is_err());
        assert!(PauliOperator::parse("+1 X5", 3).is_err());
    }

    #[test]
    fn y_matrix_is_standard() {
        let y = PauliOperator::parse("+1 Y0", 1).unwrap();
        let m = y.to_matrix(&[0]).unwrap();
        let expect = CMat::from_row_slice(
            2,
            2,
            &[ZERO, C64::new(0.0, -1.0), C64::new(0.0, 1.0), ZERO],
        );
        assert!(max_abs_diff(&m, &expect) < 1e-15);
        assert!(y.is_hermitian());
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(4, 4).len(), 1);
        assert_eq!(combinations(3, 0).len(), 1);
        assert_eq!(combinations(6, 3)[0], vec![0, 1, 2]);
        assert_eq!(combinations(6, 3).last().unwrap(), &vec![3, 4, 5]);
    }

    #[test]
    fn minus_identity_rejected() {
        let z = PauliOperator::parse("+1 Z0", 1).unwrap();
        assert!(StabilizerGroup::new(1, vec![z.clone(), z.negate()]).is_err());
        assert!(StabilizerGroup::new(1, vec![z.clone(), z]).is_ok());
    }
}
