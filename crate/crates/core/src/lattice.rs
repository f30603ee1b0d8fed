//! Periodic square lattices, the square families S(r), and stabilizer models
//! written as sums of commuting projectors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, LocalOperator, C64, ONE, ZERO};
use crate::pauli::{PauliOperator, StabilizerGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Two qubits per site: the horizontal and vertical edge leaving the site.
    Edges,
    /// One qubit per site.
    Sites,
}

impl Layout {
    pub fn qubits_per_site(self) -> usize {
        match self {
            Layout::Edges => 2,
            Layout::Sites => 1,
        }
    }
}

/// Edge orientation for the `Edges` layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Horizontal = 0,
    Vertical = 1,
}

/// r×r block of sites anchored at its lower-left corner (x, y).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Square {
    pub r: usize,
    pub x: usize,
    pub y: usize,
}

impl std::fmt::Display for Square {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.x, self.y, self.r)
    }
}

/// Periodic lattice Z_lx × Z_ly. The paper's Λ is the case lx = ly = L;
/// ly = 1 gives a ring, used for one-dimensional experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub lx: usize,
    pub ly: usize,
    pub layout: Layout,
}

impl Lattice {
    pub fn square(l: usize, layout: Layout) -> Self {
        Lattice { lx: l, ly: l, layout }
    }

    pub fn new(lx: usize, ly: usize, layout: Layout) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::Invalid("lattice sides must be positive".into()));
        }
        Ok(Lattice { lx, ly, layout })
    }

    /// Linear size L (largest side).
    pub fn size(&self) -> usize {
        self.lx.max(self.ly)
    }

    pub fn site_count(&self) -> usize {
        self.lx * self.ly
    }

    pub fn qubit_count(&self) -> usize {
        self.site_count() * self.layout.qubits_per_site()
    }

    pub fn site_index(&self, x: usize, y: usize) -> usize {
        (y % self.ly) * self.lx + (x % self.lx)
    }

    pub fn site_coord(&self, s: usize) -> (usize, usize) {
        (s % self.lx, s / self.lx)
    }

    pub fn wrap(&self, x: isize, y: isize) -> (usize, usize) {
        (x.rem_euclid(self.lx as isize) as usize, y.rem_euclid(self.ly as isize) as usize)
    }

    /// Qubit on the edge leaving site (x, y) in direction `o`.
    pub fn edge(&self, x: isize, y: isize, o: Orientation) -> usize {
        let (x, y) = self.wrap(x, y);
        self.site_index(x, y) * 2 + o as usize
    }

    pub fn site_qubit(&self, x: isize, y: isize) -> usize {
        let (x, y) = self.wrap(x, y);
        self.site_index(x, y)
    }

    /// Site owning a qubit.
    pub fn qubit_site(&self, q: usize) -> (usize, usize) {
        self.site_coord(q / self.layout.qubits_per_site())
    }

    fn axis_dist(a: usize, b: usize, l: usize) -> usize {
        let d = a.abs_diff(b);
        d.min(l - d)
    }

    /// l∞ distance on the torus.
    pub fn distance(&self, a: (usize, usize), b: (usize, usize)) -> usize {
        Self::axis_dist(a.0, b.0, self.lx).max(Self::axis_dist(a.1, b.1, self.ly))
    }

    fn extent(&self, r: usize) -> (usize, usize) {
        (r.min(self.lx), r.min(self.ly))
    }

    /// Canonical form: anchors are zero along axes the square covers entirely.
    pub fn canonical(&self, x: isize, y: isize, r: usize) -> Square {
        let r = r.min(self.size());
        let (ex, ey) = self.extent(r);
        let (mut x, mut y) = self.wrap(x, y);
        if ex == self.lx {
            x = 0;
        }
        if ey == self.ly {
            y = 0;
        }
        Square { r, x, y }
    }

    /// S(r): all r×r squares, ordered by anchor (x, then y).
    pub fn squares(&self, r: usize) -> Vec<Square> {
        if r == 0 || r > self.size() {
            return vec![];
        }
        let (ex, ey) = self.extent(r);
        let nx = if ex == self.lx { 1 } else { self.lx };
        let ny = if ey == self.ly { 1 } else { self.ly };
        let mut out = Vec::with_capacity(nx * ny);
        for x in 0..nx {
            for y in 0..ny {
                out.push(Square { r, x, y });
            }
        }
        out
    }

    pub fn full(&self) -> Square {
        Square { r: self.size(), x: 0, y: 0 }
    }

    pub fn is_full(&self, a: &Square) -> bool {
        let (ex, ey) = self.extent(a.r);
        ex == self.lx && ey == self.ly
    }

    pub fn square_sites(&self, a: &Square) -> Vec<(usize, usize)> {
        let (ex, ey) = self.extent(a.r);
        let mut out = Vec::with_capacity(ex * ey);
        for i in 0..ex {
            for j in 0..ey {
                out.push(((a.x + i) % self.lx, (a.y + j) % self.ly));
            }
        }
        out
    }

    /// Sorted qubit register of a square.
    pub fn square_qubits(&self, a: &Square) -> Vec<usize> {
        let k = self.layout.qubits_per_site();
        let mut qs: Vec<usize> = self
            .square_sites(a)
            .into_iter()
            .flat_map(|(x, y)| {
                let s = self.site_index(x, y);
                (0..k).map(move |o| s * k + o)
            })
            .collect();
        qs.sort_unstable();
        qs
    }

    pub fn contains_site(&self, a: &Square, site: (usize, usize)) -> bool {
        let (ex, ey) = self.extent(a.r);
        let dx = (site.0 + self.lx - a.x) % self.lx;
        let dy = (site.1 + self.ly - a.y) % self.ly;
        dx < ex && dy < ey
    }

    /// Site-set inclusion `inner ⊆ outer`.
    pub fn square_within(&self, inner: &Square, outer: &Square) -> bool {
        let (ix, iy) = self.extent(inner.r);
        let (ox, oy) = self.extent(outer.r);
        let fits = |i0: usize, ie: usize, o0: usize, oe: usize, l: usize| {
            if oe == l {
                return true;
            }
            if ie > oe {
                return false;
            }
            let d = (i0 + l - o0) % l;
            d + ie <= oe
        };
        fits(inner.x, ix, outer.x, ox, self.lx) && fits(inner.y, iy, outer.y, oy, self.ly)
    }

    pub fn squares_intersect(&self, a: &Square, b: &Square) -> bool {
        let (ax, ay) = self.extent(a.r);
        let (bx, by) = self.extent(b.r);
        let overlap = |a0: usize, ae: usize, b0: usize, be: usize, l: usize| {
            if ae == l || be == l {
                return true;
            }
            let d = (b0 + l - a0) % l;
            d < ae || (l - d) < be
        };
        overlap(a.x, ax, b.x, bx, self.lx) && overlap(a.y, ay, b.y, by, self.ly)
    }

    /// The square grown by `j` sites on every side (size r + 2j, clipped to Λ).
    pub fn grow(&self, a: &Square, j: usize) -> Square {
        self.canonical(a.x as isize - j as isize, a.y as isize - j as isize, a.r + 2 * j)
    }

    /// Smallest square containing all given sites; ties go to the smallest anchor.
    pub fn covering_square(&self, sites: &[(usize, usize)]) -> Square {
        for r in 1..=self.size() {
            for sq in self.squares(r) {
                if sites.iter().all(|&s| self.contains_site(&sq, s)) {
                    return sq;
                }
            }
        }
        self.full()
    }

    /// Lexicographically first square of exactly size `r` containing the given sites.
    pub fn first_square_of_size(&self, r: usize, sites: &[(usize, usize)]) -> Option<Square> {
        self.squares(r.min(self.size()))
            .into_iter()
            .find(|sq| sites.iter().all(|&s| self.contains_site(sq, s)))
    }

    /// Canonical generator placement: the first covering 2×2 square, or the
    /// smallest covering square when the support does not fit in 2×2.
    pub fn assign_square(&self, sites: &[(usize, usize)]) -> Square {
        self.first_square_of_size(2, sites).unwrap_or_else(|| {
            (2..=self.size())
                .find_map(|r| self.first_square_of_size(r, sites))
                .unwrap_or_else(|| self.full())
        })
    }

    pub fn sites_of_qubits(&self, qubits: &[usize]) -> Vec<(usize, usize)> {
        let mut s: Vec<(usize, usize)> = qubits.iter().map(|&q| self.qubit_site(q)).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn all_qubits(&self) -> Vec<usize> {
        (0..self.qubit_count()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Toric,
    UnstableToric,
    Custom,
}

/// How a generator S enters the Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// (I - S)/2 per generator: unit gap per violated generator.
    Projector,
    /// -S per generator, as in the toric code literature.
    Sign,
}

/// Commuting stabilizer Hamiltonian H0 = Σ_A G_A with G_A = Σ_{a→A} (I - S_a)/2.
#[derive(Clone, Debug)]
pub struct Model {
    pub lattice: Lattice,
    pub kind: ModelKind,
    pub label: String,
    group: StabilizerGroup,
    assignment: Vec<Square>,
}

impl Model {
    /// Builds a model; generators without an explicit square go to the first covering square.
    pub fn from_generators(
        lattice: Lattice,
        generators: Vec<PauliOperator>,
        squares: Vec<Option<Square>>,
        kind: ModelKind,
        label: impl Into<String>,
    ) -> Result<Self> {
        if squares.len() != generators.len() {
            return Err(Error::Invalid("one square entry per generator expected".into()));
        }
        let n = lattice.qubit_count();
        let mut assignment = Vec::with_capacity(generators.len());
        for (g, sq) in generators.iter().zip(&squares) {
            if g.qubit_count() != n {
                return Err(Error::QubitMismatch(g.qubit_count(), n));
            }
            let sites = lattice.sites_of_qubits(&g.support());
            let chosen = match sq {
                Some(s) => {
                    let s = lattice.canonical(s.x as isize, s.y as isize, s.r);
                    if !sites.iter().all(|&p| lattice.contains_site(&s, p)) {
                        return Err(Error::Invalid(format!("generator {g} is not inside square {s}")));
                    }
                    s
                }
                None => lattice.assign_square(&sites),
            };
            assignment.push(chosen);
        }
        let group = StabilizerGroup::new(n, generators)?;
        Ok(Model { lattice, kind, label: label.into(), group, assignment })
    }

    pub fn group(&self) -> &StabilizerGroup {
        &self.group
    }

    pub fn generators(&self) -> &[PauliOperator] {
        self.group.generators()
    }

    pub fn assignment(&self) -> &[Square] {
        &self.assignment
    }

    pub fn qubit_count(&self) -> usize {
        self.lattice.qubit_count()
    }

    pub fn dim(&self) -> usize {
        1usize << self.qubit_count()
    }

    /// Generator indices grouped by assigned square.
    pub fn terms(&self) -> BTreeMap<Square, Vec<usize>> {
        let mut map: BTreeMap<Square, Vec<usize>> = BTreeMap::new();
        for (k, sq) in self.assignment.iter().enumerate() {
            map.entry(*sq).or_default().push(k);
        }
        map
    }

    /// G_A on the square's register.
    pub fn term_operator(&self, a: &Square) -> Result<LocalOperator> {
        let qubits = self.lattice.square_qubits(a);
        linalg::check_dense("term operator", 1 << qubits.len())?;
        let d = 1usize << qubits.len();
        let mut m = CMat::zeros(d, d);
        for (k, sq) in self.assignment.iter().enumerate() {
            if sq == a {
                m += generator_projector_excited(&self.generators()[k], &qubits)?;
            }
        }
        LocalOperator::new(qubits, m)
    }

    /// H0(A) = Σ_{B ⊆ A} G_B on A's register.
    pub fn local_hamiltonian(&self, a: &Square) -> Result<LocalOperator> {
        let qubits = self.lattice.square_qubits(a);
        linalg::check_dense("local Hamiltonian", 1 << qubits.len())?;
        let d = 1usize << qubits.len();
        let mut m = CMat::zeros(d, d);
        for (k, sq) in self.assignment.iter().enumerate() {
            if self.lattice.square_within(sq, a) {
                m += generator_projector_excited(&self.generators()[k], &qubits)?;
            }
        }
        LocalOperator::new(qubits, m)
    }

    /// P_A: ground projector of the single term G_A, on A's register.
    pub fn term_ground_projector(&self, a: &Square) -> Result<LocalOperator> {
        self.projector_over(a, |sq| sq == a)
    }

    /// P_B = Π_{A ⊆ B} P_A, on B's register.
    pub fn local_ground_projector(&self, b: &Square) -> Result<LocalOperator> {
        self.projector_over(b, |sq| self.lattice.square_within(sq, b))
    }

    fn projector_over(&self, region: &Square, pick: impl Fn(&Square) -> bool) -> Result<LocalOperator> {
        let qubits = self.lattice.square_qubits(region);
        linalg::check_dense("local ground projector", 1 << qubits.len())?;
        let d = 1usize << qubits.len();
        let mut p = CMat::identity(d, d);
        for (k, sq) in self.assignment.iter().enumerate() {
            if pick(sq) {
                let s = self.generators()[k].to_matrix(&qubits)?;
                let half = (CMat::identity(d, d) + s) * C64::new(0.5, 0.0);
                p = half * p;
            }
        }
        LocalOperator::new(qubits, p)
    }

    /// Dense H0 on the full lattice.
    pub fn hamiltonian_dense(&self, norm: Normalization) -> Result<CMat> {
        let n = self.qubit_count();
        linalg::check_dense("Hamiltonian", 1 << n)?;
        let all = self.lattice.all_qubits();
        let d = 1usize << n;
        let mut h = CMat::zeros(d, d);
        for g in self.generators() {
            h += match norm {
                Normalization::Projector => generator_projector_excited(g, &all)?,
                Normalization::Sign => -g.to_matrix(&all)?,
            };
        }
        Ok(h)
    }

    /// Dense global ground projector Π_a (I + S_a)/2.
    pub fn ground_projector_dense(&self) -> Result<CMat> {
        Ok(self.local_ground_projector(&self.lattice.full())?.mat)
    }

    /// Matrix-free H0 (+ optional dense local perturbation terms).
    pub fn hamiltonian_operator(&self, norm: Normalization, extra: &[LocalOperator]) -> Result<HamiltonianOperator> {
        let n = self.qubit_count();
        linalg::check_sparse("matrix-free Hamiltonian", 1 << n)?;
        let mut op = HamiltonianOperator::new(n);
        for g in self.generators() {
            match norm {
                Normalization::Projector => {
                    op.constant += 0.5;
                    op.paulis.push((-0.5, g.clone()));
                }
                Normalization::Sign => op.paulis.push((-1.0, g.clone())),
            }
        }
        op.blocks.extend(extra.iter().cloned());
        Ok(op)
    }

    /// Writes the text model format.
    pub fn to_model_file(&self) -> String {
        let layout = match self.lattice.layout {
            Layout::Edges => "edges",
            Layout::Sites => "sites",
        };
        let mut s = String::new();
        if self.lattice.lx == self.lattice.ly {
            writeln!(s, "lattice L={} layout={layout}", self.lattice.lx).unwrap();
        } else {
            writeln!(s, "lattice L={} Ly={} layout={layout}", self.lattice.lx, self.lattice.ly).unwrap();
        }
        for (g, sq) in self.generators().iter().zip(&self.assignment) {
            writeln!(s, "{g} @square ({},{},{})", sq.x, sq.y, sq.r).unwrap();
        }
        s
    }

    /// Parses the text model format.
    pub fn from_model_file(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty model file".into()))?;
        let mut toks = header.split_whitespace();
        if toks.next() != Some("lattice") {
            return Err(Error::Parse("model file must start with 'lattice'".into()));
        }
        let mut l = None;
        let mut ly = None;
        let mut layout = Layout::Edges;
        for t in toks {
            let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field '{t}'")))?;
            match k {
                "L" => l = Some(v.parse().map_err(|_| Error::Parse(format!("bad L '{v}'")))?),
                "Ly" => ly = Some(v.parse().map_err(|_| Error::Parse(format!("bad Ly '{v}'")))?),
                "layout" => {
                    layout = match v {
                        "edges" => Layout::Edges,
                        "sites" => Layout::Sites,
                        _ => return Err(Error::Parse(format!("unknown layout '{v}'"))),
                    }
                }
                _ => return Err(Error::Parse(format!("unknown header field '{k}'"))),
            }
        }
        let l: usize = l.ok_or_else(|| Error::Parse("header lacks L".into()))?;
        let lattice = Lattice::new(l, ly.unwrap_or(l), layout)?;
        let n = lattice.qubit_count();
        let mut gens = Vec::new();
        let mut squares = Vec::new();
        for line in lines {
            let (pauli_text, sq) = match line.split_once('@') {
                Some((p, rest)) => (p, Some(parse_square_annotation(rest)?)),
                None => (line, None),
            };
            gens.push(PauliOperator::parse(pauli_text, n)?);
            squares.push(sq);
        }
        Model::from_generators(lattice, gens, squares, ModelKind::Custom, "custom")
    }

    /// Applies a lattice translation to every generator and its square.
    pub fn translated(&self, dx: usize, dy: usize) -> Result<Model> {
        let lat = self.lattice;
        let k = lat.layout.qubits_per_site();
        let n = lat.qubit_count();
        let map = |q: usize| {
            let (x, y) = lat.qubit_site(q);
            let s = lat.site_index(x + dx, y + dy);
            s * k + q % k
        };
        let mut gens = Vec::new();
        let mut squares = Vec::new();
        for (g, sq) in self.generators().iter().zip(&self.assignment) {
            let letters: Vec<(usize, char)> = g
                .support()
                .into_iter()
                .map(|q| {
                    let c = match (g.x_bit(q), g.z_bit(q)) {
                        (true, true) => 'Y',
                        (true, false) => 'X',
                        _ => 'Z',
                    };
                    (map(q), c)
                })
                .collect();
            gens.push(PauliOperator::from_letters(n, &letters, g.coefficient_exponent())?);
            squares.push(Some(lat.canonical((sq.x + dx) as isize, (sq.y + dy) as isize, sq.r)));
        }
        Model::from_generators(lat, gens, squares, self.kind, self.label.clone())
    }
}

fn parse_square_annotation(rest: &str) -> Result<Square> {
    let rest = rest.trim();
    let body = rest
        .strip_prefix("square")
        .map(str::trim)
        .and_then(|s| s.strip_prefix('('))
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Parse(format!("bad square annotation '@{rest}'")))?;
    let nums: Vec<usize> = body
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::Parse(format!("bad square field '{t}'"))))
        .collect::<Result<_>>()?;
    if nums.len() != 3 || nums[2] == 0 {
        return Err(Error::Parse(format!("square needs (x,y,r) with r ≥ 1, got '{body}'")));
    }
    Ok(Square { x: nums[0], y: nums[1], r: nums[2] })
}

/// (I - S)/2 on a register.
pub fn generator_projector_excited(g: &PauliOperator, qubits: &[usize]) -> Result<CMat> {
    let s = g.to_matrix(qubits)?;
    let d = s.nrows();
    Ok((CMat::identity(d, d) - s) * C64::new(0.5, 0.0))
}

/// Plaquette operator: Z on the four edges bounding the face with lower-left corner (x, y).
pub fn plaquette(lat: &Lattice, x: isize, y: isize) -> PauliOperator {
    use Orientation::*;
    let qs = [lat.edge(x, y, Horizontal), lat.edge(x, y + 1, Horizontal), lat.edge(x, y, Vertical), lat.edge(x + 1, y, Vertical)];
    PauliOperator::z_on(lat.qubit_count(), &dedup(&qs))
}

/// Star operator: X on the four edges meeting at site (x, y).
pub fn star(lat: &Lattice, x: isize, y: isize) -> PauliOperator {
    use Orientation::*;
    let qs = [lat.edge(x, y, Horizontal), lat.edge(x - 1, y, Horizontal), lat.edge(x, y, Vertical), lat.edge(x, y - 1, Vertical)];
    PauliOperator::x_on(lat.qubit_count(), &dedup(&qs))
}

/// Removes pairs of repeated edges (relevant only for L = 1, where a product
/// would square them to the identity).
fn dedup(qs: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = Vec::new();
    for &q in qs {
        if let Some(pos) = v.iter().position(|&w| w == q) {
            v.remove(pos);
        } else {
            v.push(q);
        }
    }
    v.sort_unstable();
    v
}

/// Toric code with plaquettes listed before stars, both row-major by site.
pub fn build_toric_code(l: usize) -> Result<Model> {
    if l < 2 {
        return Err(Error::Precondition("toric code needs L ≥ 2".into()));
    }
    let lat = Lattice::square(l, Layout::Edges);
    let mut gens = Vec::new();
    for y in 0..l as isize {
        for x in 0..l as isize {
            gens.push(plaquette(&lat, x, y));
        }
    }
    for y in 0..l as isize {
        for x in 0..l as isize {
            gens.push(star(&lat, x, y));
        }
    }
    let squares = vec![None; gens.len()];
    Model::from_generators(lat, gens, squares, ModelKind::Toric, format!("toric:{l}"))
}

/// H'_tc generators: B_p B_{p+x}, B_p B_{p+y} for every plaquette p, all stars, and B_{p*}.
pub fn build_unstable_toric_code(l: usize, p_star: (usize, usize)) -> Result<Model> {
    if l < 2 {
        return Err(Error::Precondition("unstable toric code needs L ≥ 2".into()));
    }
    if (l * l) % 2 != 0 {
        return Err(Error::Precondition(format!("plaquette count {} must be even", l * l)));
    }
    let lat = Lattice::square(l, Layout::Edges);
    let mut gens = Vec::new();
    for y in 0..l as isize {
        for x in 0..l as isize {
            let bp = plaquette(&lat, x, y);
            gens.push(bp.multiply(&plaquette(&lat, x + 1, y))?);
            gens.push(bp.multiply(&plaquette(&lat, x, y + 1))?);
        }
    }
    for y in 0..l as isize {
        for x in 0..l as isize {
            gens.push(star(&lat, x, y));
        }
    }
    gens.push(plaquette(&lat, p_star.0 as isize, p_star.1 as isize));
    let squares = vec![None; gens.len()];
    Model::from_generators(lat, gens, squares, ModelKind::UnstableToric, format!("unstable-toric:{l}"))
}

/// Sum of weighted Pauli strings and dense local blocks, applied term by term
/// in a fixed order.
#[derive(Clone, Debug)]
pub struct HamiltonianOperator {
    pub n: usize,
    pub constant: f64,
    pub paulis: Vec<(f64, PauliOperator)>,
    pub blocks: Vec<LocalOperator>,
}

impl HamiltonianOperator {
    pub fn new(n: usize) -> Self {
        HamiltonianOperator { n, constant: 0.0, paulis: vec![], blocks: vec![] }
    }

    pub fn dim(&self) -> usize {
        1usize << self.n
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> = v.iter().map(|&a| a * self.constant).collect();
        let mut tmp = vec![ZERO; v.len()];
        for (w, p) in &self.paulis {
            tmp.iter_mut().for_each(|t| *t = ZERO);
            p.apply(v, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t * *w;
            }
        }
        for b in &self.blocks {
            b.apply_add(self.n, v, &mut out);
        }
        out
    }

    pub fn to_dense(&self) -> Result<CMat> {
        let d = self.dim();
        linalg::check_dense("Hamiltonian", d)?;
        let all: Vec<usize> = (0..self.n).collect();
        let mut h = CMat::identity(d, d) * C64::new(self.constant, 0.0);
        for (w, p) in &self.paulis {
            h += p.to_matrix(&all)? * C64::new(*w, 0.0);
        }
        for b in &self.blocks {
            h += b.on(&all)?;
        }
        Ok(h)
    }
}

/// Sums local operators into a dense operator on `register`.
pub fn sum_on(ops: &[LocalOperator], register: &[usize]) -> Result<CMat> {
    let d = 1usize << register.len();
    let mut m = CMat::zeros(d, d);
    for op in ops {
        m += op.on(register)?;
    }
    Ok(m)
}

pub fn scalar(x: f64) -> C64 {
    ONE * x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_counts() {
        let lat = Lattice::square(4, Layout::Edges);
        assert_eq!(lat.squares(2).len(), 16);
        assert_eq!(lat.squares(5).len(), 0);
        assert_eq!(lat.squares(4), vec![Square { r: 4, x: 0, y: 0 }]);
        assert_eq!(lat.squares(3).len(), 16);
    }

    #[test]
    fn ring_squares() {
        let lat = Lattice::new(10, 1, Layout::Sites).unwrap();
        assert_eq!(lat.squares(3).len(), 10);
        assert_eq!(lat.square_qubits(&Square { r: 3, x: 8, y: 0 }), vec![0, 8, 9]);
        assert_eq!(lat.squares(10).len(), 1);
    }

    #[test]
    fn growth_and_containment() {
        let lat = Lattice::square(6, Layout::Edges);
        let a = Square { r: 2, x: 0, y: 0 };
        let b = lat.grow(&a, 1);
        assert_eq!(b, Square { r: 4, x: 5, y: 5 });
        assert!(lat.square_within(&a, &b));
        assert!(!lat.square_within(&b, &a));
        assert!(lat.square_within(&b, &lat.full()));
        assert_eq!(lat.grow(&a, 3), lat.full());
    }

    #[test]
    fn toric_generators_fit_two_by_two() {
        let m = build_toric_code(4).unwrap();
        assert!(m.assignment().iter().all(|s| s.r == 2));
        assert_eq!(m.generators().len(), 32);
        assert_eq!(m.generators()[0].weight(), 4);
    }

    #[test]
    fn model_file_round_trip() {
        let m = build_toric_code(3).unwrap();
        let text = m.to_model_file();
        let back = Model::from_model_file(&text).unwrap();
        assert_eq!(back.generators(), m.generators());
        assert_eq!(back.assignment(), m.assignment());
    }

    #[test]
    fn model_file_rejects_bad_header() {
        assert!(Model::from_model_file("lattice layout=edges\n+1 Z0").is_err());
        assert!(Model::from_model_file("grid L=2\n").is_err());
        assert!(Model::from_model_file("lattice L=2 layout=edges\n+1 Z0 @square (0,0)").is_err());
    }
}
