use proptest::prelude::*;
use tqo::lattice::{build_toric_code, plaquette, star, Lattice, Layout};
use tqo::linalg::{max_abs_diff, CMat, C64};
use tqo::pauli::{minimum_distance, PauliOperator, StabilizerGroup};

fn dense(p: &PauliOperator) -> CMat {
    let all: Vec<usize> = (0..p.qubit_count()).collect();
    p.to_matrix(&all).unwrap()
}

/// Independent single-qubit matrices, tensored by hand (qubit 0 is the least significant bit).
fn letter_matrix(c: char) -> CMat {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match c {
        'I' => CMat::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => CMat::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => CMat::from_row_slice(2, 2, &[z, -i, i, z]),
        'Z' => CMat::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => unreachable!(),
    }
}

fn oracle_matrix(letters: &[char], coeff: C64) -> CMat {
    let mut m = CMat::identity(1, 1);
    for &c in letters {
        m = letter_matrix(c).kronecker(&m);
    }
    m * coeff
}

fn from_string(letters: &[char], coeff_exp: u8) -> PauliOperator {
    let l: Vec<(usize, char)> = letters.iter().enumerate().map(|(q, &c)| (q, c)).collect();
    PauliOperator::from_letters(letters.len(), &l, coeff_exp).unwrap()
}

/// Naive GF(2) span test on boolean vectors, written independently of the crate.
fn span_contains(rows: &[Vec<bool>], target: &[bool]) -> bool {
    let mut basis: Vec<Vec<bool>> = Vec::new();
    for r in rows {
        let mut v = r.clone();
        for b in &basis {
            let piv = b.iter().position(|&x| x).unwrap();
            if v[piv] {
                v.iter_mut().zip(b).for_each(|(a, c)| *a ^= c);
            }
        }
        if v.iter().any(|&x| x) {
            basis.push(v);
        }
    }
    let mut v = target.to_vec();
    for b in &basis {
        let piv = b.iter().position(|&x| x).unwrap();
        if v[piv] {
            v.iter_mut().zip(b).for_each(|(a, c)| *a ^= c);
        }
    }
    !v.iter().any(|&x| x)
}

fn symplectic_bools(p: &PauliOperator) -> Vec<bool> {
    let n = p.qubit_count();
    (0..n).map(|q| p.x_bit(q)).chain((0..n).map(|q| p.z_bit(q))).collect()
}

#[test]
fn x_times_x_is_identity() {
    let x = PauliOperator::parse("+1 X0", 2).unwrap();
    let p = x.multiply(&x).unwrap();
    assert_eq!(p, PauliOperator::identity(2));
    assert_eq!(p.phase_exponent(), 0);
}

#[test]
fn x_times_z_matches_dense_product() {
    let x = PauliOperator::parse("+1 X0", 1).unwrap();
    let z = PauliOperator::parse("+1 Z0", 1).unwrap();
    let xz = x.multiply(&z).unwrap();
    assert!(xz.x_bit(0) && xz.z_bit(0));
    let oracle = letter_matrix('X') * letter_matrix('Z');
    assert!(max_abs_diff(&dense(&xz), &oracle) < 1e-15);
    // XZ = -iY
    assert_eq!(xz.to_string(), "-i Y0");
}

#[test]
fn identity_is_neutral() {
    let p = PauliOperator::parse("-1 Y1 Z2", 3).unwrap();
    assert_eq!(p.multiply(&PauliOperator::identity(3)).unwrap(), p);
}

#[test]
fn size_mismatch_is_reported() {
    let a = PauliOperator::identity(2);
    let b = PauliOperator::identity(3);
    assert!(a.multiply(&b).is_err());
    assert!(a.commutes(&b).is_err());
}

#[test]
fn commutation_basics() {
    let x = PauliOperator::parse("+1 X0", 1).unwrap();
    let z = PauliOperator::parse("+1 Z0", 1).unwrap();
    assert!(x.commutes(&x).unwrap());
    assert!(!x.commutes(&z).unwrap());
}

#[test]
fn plaquette_and_star_commute_densely() {
    let lat = Lattice::square(2, Layout::Edges);
    let bp = plaquette(&lat, 0, 0);
    let a_s = star(&lat, 1, 0);
    let shared = bp.support().iter().filter(|q| a_s.support().contains(q)).count();
    assert!(shared % 2 == 0 && shared > 0);
    assert!(bp.commutes(&a_s).unwrap());
    let (a, b) = (dense(&bp), dense(&a_s));
    assert!(max_abs_diff(&(&a * &b), &(&b * &a)) < 1e-14);
}

#[test]
fn membership_examples() {
    let m = build_toric_code(2).unwrap();
    let g = m.group();
    assert!(g.contains(&PauliOperator::identity(8)).unwrap());
    assert!(g.contains(&g.generators()[0]).unwrap());
    assert!(!g.contains(&g.generators()[0].negate()).unwrap());
    let z = PauliOperator::parse("+1 Z0", 8).unwrap();
    assert!(!g.contains(&z).unwrap());
    // exhaustive group enumeration oracle
    let all = g.enumerate();
    assert_eq!(all.len(), 1 << g.rank());
    assert!(!all.contains(&z));
    for e in &all {
        assert!(g.contains(e).unwrap());
    }
}

#[test]
fn toric_dependency_relation() {
    let m = build_toric_code(3).unwrap();
    let gens = m.generators();
    let mut prod = PauliOperator::identity(m.qubit_count());
    for p in &gens[..9] {
        prod = prod.multiply(p).unwrap();
    }
    assert_eq!(prod, PauliOperator::identity(m.qubit_count()));
    // two relations (all plaquettes, all stars) among 2L² generators
    assert_eq!(m.group().rank(), 2 * 9 - 2);
}

#[test]
fn supported_subgroup_edge_cases() {
    let m = build_toric_code(3).unwrap();
    let g = m.group();
    let n = m.qubit_count();
    let all: Vec<usize> = (0..n).collect();
    let full = g.supported_subgroup(&all).unwrap();
    assert_eq!(full.rank(), g.rank());
    assert!(full.is_subgroup_of(g).unwrap() && g.is_subgroup_of(&full).unwrap());
    let empty = g.supported_subgroup(&[]).unwrap();
    assert_eq!(empty.rank(), 0);
}

#[test]
fn plaquette_region_gives_single_plaquette() {
    // L=4: the four edges of one plaquette support exactly {I, B_p}
    let m = build_toric_code(4).unwrap();
    let bp = m.generators()[5].clone();
    let region = bp.support();
    let sub = m.group().supported_subgroup(&region).unwrap();
    assert_eq!(sub.rank(), 1);
    assert!(sub.contains(&bp).unwrap());
    // oracle: every Pauli on those 4 edges, membership by naive elimination
    let rows: Vec<Vec<bool>> = m.generators().iter().map(symplectic_bools).collect();
    let mut members = 0;
    for code in 0..(1usize << 8) {
        let mut letters = Vec::new();
        for (k, &q) in region.iter().enumerate() {
            let xb = code >> (2 * k) & 1 == 1;
            let zb = code >> (2 * k + 1) & 1 == 1;
            let c = match (xb, zb) {
                (false, false) => continue,
                (true, false) => 'X',
                (false, true) => 'Z',
                (true, true) => 'Y',
            };
            letters.push((q, c));
        }
        let p = PauliOperator::from_letters(m.qubit_count(), &letters, 0).unwrap();
        if span_contains(&rows, &symplectic_bools(&p)) {
            members += 1;
            assert!(sub.contains_up_to_phase(&p).unwrap());
        }
    }
    assert_eq!(members, 2);
}

#[test]
fn plaquette_region_at_l2_by_enumeration() {
    let m = build_toric_code(2).unwrap();
    let bp = m.generators()[0].clone();
    let region = bp.support();
    let sub = m.group().supported_subgroup(&region).unwrap();
    let oracle: Vec<PauliOperator> = m
        .group()
        .enumerate()
        .into_iter()
        .filter(|e| e.support().iter().all(|q| region.contains(q)))
        .collect();
    assert_eq!(1usize << sub.rank(), oracle.len());
    for e in &oracle {
        assert!(sub.contains(e).unwrap());
    }
}

#[test]
fn generated_subgroup_block_matches_supported() {
    let m = build_toric_code(4).unwrap();
    let lat = m.lattice;
    let block = tqo::lattice::Square { r: 3, x: 0, y: 0 };
    let region = lat.square_qubits(&block);
    let gen = m.group().generated_subgroup(&region).unwrap();
    let sup = m.group().supported_subgroup(&region).unwrap();
    assert!(gen.rank() > 0);
    assert!(gen.is_subgroup_of(&sup).unwrap());
    // for the toric code both constructions coincide on blocks
    assert!(sup.is_subgroup_of(&gen).unwrap());
    let all: Vec<usize> = (0..m.qubit_count()).collect();
    assert_eq!(m.group().generated_subgroup(&all).unwrap().rank(), m.group().rank());
    assert_eq!(m.group().generated_subgroup(&[]).unwrap().rank(), 0);
}

/// Naive distance oracle: enumerates all Paulis of weight ≤ cutoff.
fn distance_oracle(g: &StabilizerGroup, cutoff: usize) -> Option<usize> {
    let n = g.qubit_count();
    let rows: Vec<Vec<bool>> = g.generators().iter().map(symplectic_bools).collect();
    let mut best: Option<usize> = None;
    let total = 4usize.pow(n as u32);
    for code in 1..total {
        let mut x = vec![false; n];
        let mut z = vec![false; n];
        let mut w = 0;
        let mut c = code;
        for q in 0..n {
            let d = c % 4;
            c /= 4;
            x[q] = d & 1 == 1;
            z[q] = d & 2 == 2;
            if d != 0 {
                w += 1;
            }
        }
        if w > cutoff || best.is_some_and(|b| w >= b) {
            continue;
        }
        let commutes_all = rows.iter().all(|r| {
            let mut s = false;
            for q in 0..n {
                s ^= (x[q] && r[n + q]) ^ (z[q] && r[q]);
            }
            !s
        });
        let v: Vec<bool> = x.iter().chain(z.iter()).copied().collect();
        if commutes_all && !span_contains(&rows, &v) {
            best = Some(w);
        }
    }
    best
}

#[test]
fn toric_distance_small_sizes() {
    let m2 = build_toric_code(2).unwrap();
    let d2 = minimum_distance(m2.group(), 4).unwrap();
    assert_eq!(d2.distance, distance_oracle(m2.group(), 4));
    assert_eq!(d2.distance, Some(2));
    let m3 = build_toric_code(3).unwrap();
    let d3 = minimum_distance(m3.group(), 3).unwrap();
    assert_eq!(d3.distance, Some(3));
    let logical = d3.logical.unwrap();
    assert!(m3.generators().iter().all(|g| g.commutes(&logical).unwrap()));
    assert!(!m3.group().contains_up_to_phase(&logical).unwrap());
}

#[test]
fn product_state_has_no_logical_operators() {
    let n = 3;
    let gens: Vec<PauliOperator> =
        (0..n).map(|q| PauliOperator::parse(&format!("+1 Z{q}"), n).unwrap()).collect();
    let g = StabilizerGroup::new(n, gens).unwrap();
    let d = minimum_distance(&g, 3).unwrap();
    assert_eq!(d.distance, distance_oracle(&g, 3));
    assert_eq!(d.distance, None);
}

#[test]
fn ising_chain_has_weight_one_logical() {
    let n = 5;
    let gens: Vec<PauliOperator> = (0..n)
        .map(|q| PauliOperator::parse(&format!("+1 Z{} Z{}", q, (q + 1) % n), n).unwrap())
        .collect();
    let g = StabilizerGroup::new(n, gens).unwrap();
    assert_eq!(minimum_distance(&g, 2).unwrap().distance, Some(1));
    assert_eq!(distance_oracle(&g, 2), Some(1));
}

#[test]
fn zero_cutoff_rejected() {
    let g = StabilizerGroup::trivial(2);
    assert!(minimum_distance(&g, 0).is_err());
}

#[test]
fn multiplication_exhaustive_on_three_qubits() {
    let letters = ['I', 'X', 'Y', 'Z'];
    let strings: Vec<Vec<char>> = (0..64)
        .map(|c| (0..3).map(|q| letters[(c >> (2 * q)) & 3]).collect())
        .collect();
    let phases = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];
    let mut ops = Vec::new();
    for s in &strings {
        for k in 0..4u8 {
            ops.push((from_string(s, k), oracle_matrix(s, phases[k as usize])));
        }
    }
    for (p, pm) in &ops {
        assert!(max_abs_diff(&dense(p), pm) < 1e-15);
    }
    for (p, pm) in ops.iter().step_by(3) {
        for (q, qm) in &ops {
            let prod = p.multiply(q).unwrap();
            assert!(max_abs_diff(&dense(&prod), &(pm * qm)) < 1e-14);
        }
    }
}

fn arb_pauli(n: usize) -> impl Strategy<Value = PauliOperator> {
    (prop::collection::vec(0usize..4, n), 0u8..4).prop_map(move |(codes, ph)| {
        let letters: Vec<char> = codes.iter().map(|&c| ['I', 'X', 'Y', 'Z'][c]).collect();
        from_string(&letters, ph)
    })
}

proptest! {
    #[test]
    fn commutes_agrees_with_dense((p, q) in (1usize..=6).prop_flat_map(|n| (arb_pauli(n), arb_pauli(n)))) {
        let (a, b) = (dense(&p), dense(&q));
        let comm = &a * &b - &b * &a;
        let zero = comm.iter().all(|x| x.norm() < 1e-12);
        prop_assert_eq!(p.commutes(&q).unwrap(), zero);
    }

    #[test]
    fn multiplication_is_associative(p in arb_pauli(4), q in arb_pauli(4), r in arb_pauli(4)) {
        let left = p.multiply(&q).unwrap().multiply(&r).unwrap();
        let right = p.multiply(&q.multiply(&r).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn hermiticity_predicate_matches_dense(p in arb_pauli(3)) {
        let m = dense(&p);
        let herm = max_abs_diff(&m, &m.adjoint()) < 1e-14;
        prop_assert_eq!(p.is_hermitian(), herm);
    }

    #[test]
    fn subgroups_are_nested(l in 2usize..=4, sx in 0usize..4, sy in 0usize..4, r in 1usize..=3) {
        let m = build_toric_code(l).unwrap();
        let lat = m.lattice;
        let sq = lat.canonical(sx as isize, sy as isize, r);
        let region = lat.square_qubits(&sq);
        let sup = m.group().supported_subgroup(&region).unwrap();
        let gen = m.group().generated_subgroup(&region).unwrap();
        prop_assert!(sup.is_subgroup_of(m.group()).unwrap());
        prop_assert!(gen.is_subgroup_of(&sup).unwrap());
        for e in sup.generators() {
            prop_assert!(e.support().iter().all(|q| region.contains(q)));
        }
    }
}
