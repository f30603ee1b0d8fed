use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tqo::lattice::{build_toric_code, build_unstable_toric_code, Normalization};
use tqo::linalg::{self, eigvalsh, CMat, LocalOperator, C64};
use tqo::pauli::{PauliOperator, StabilizerGroup};
use tqo::perturbation::random_decomposition;
use tqo::spectral::*;

/// Greedy random commuting, independent Pauli set on n qubits.
fn random_commuting(n: usize, count: usize, seed: u64) -> Vec<PauliOperator> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<PauliOperator> = vec![];
    while out.len() < count {
        let letters: Vec<(usize, char)> = (0..n)
            .filter_map(|q| match rng.random_range(0..4) {
                0 => None,
                1 => Some((q, 'X')),
                2 => Some((q, 'Y')),
                _ => Some((q, 'Z')),
            })
            .collect();
        if letters.is_empty() {
            continue;
        }
        let p = PauliOperator::from_letters(n, &letters, 0).unwrap();
        if !out.iter().all(|g| g.commutes(&p).unwrap()) {
            continue;
        }
        let mut trial = out.clone();
        trial.push(p.clone());
        if let Ok(g) = StabilizerGroup::new(n, trial) {
            if g.rank() == out.len() + 1 {
                out.push(p);
            }
        }
    }
    out
}

fn dense_sum(n: usize, terms: &[(f64, PauliOperator)]) -> CMat {
    let all: Vec<usize> = (0..n).collect();
    let d = 1 << n;
    let mut h = CMat::zeros(d, d);
    for (c, p) in terms {
        h += p.to_matrix(&all).unwrap() * C64::new(*c, 0.0);
    }
    h
}

#[test]
fn toric_low_spectrum() {
    let m = build_toric_code(2).unwrap();
    let h = m.hamiltonian_dense(Normalization::Projector).unwrap();
    let vals = low_spectrum(&h, 5).unwrap();
    let expected = [0.0, 0.0, 0.0, 0.0, 2.0];
    for (a, b) in vals.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    let zero = CMat::zeros(16, 16);
    assert!(low_spectrum(&zero, 4).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn lanczos_matches_dense_on_commuting_models() {
    for seed in 0..3 {
        let n = 10;
        let gens = random_commuting(n, 8, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let terms: Vec<(f64, PauliOperator)> = gens.into_iter().map(|g| (rng.random_range(0.5..1.5), g)).collect();
        let h = dense_sum(n, &terms);
        let dense = eigvalsh(&h);
        let iter = lanczos_lowest(&h, 8, &LanczosOptions::default()).unwrap();
        for (a, b) in iter.values.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-8, "seed {seed}: {:?} vs {:?}", iter.values, &dense[..8]);
        }
    }
}

#[test]
fn lanczos_matrix_free_toric() {
    let m = build_toric_code(2).unwrap();
    let op = m.hamiltonian_operator(Normalization::Projector, &[]).unwrap();
    let r = lanczos_lowest(&op, 6, &LanczosOptions::default()).unwrap();
    let expected = [0.0, 0.0, 0.0, 0.0, 2.0, 2.0];
    for (a, b) in r.values.iter().zip(expected) {
        assert!((a - b).abs() < 1e-9, "{:?}", r.values);
    }
}

#[test]
fn unperturbed_bands_are_exact() {
    let m = build_toric_code(2).unwrap();
    let levels = integer_levels(&m).unwrap();
    assert_eq!(levels[..3], [0, 2, 4]);
    let vals = eigvalsh(&m.hamiltonian_dense(Normalization::Projector).unwrap());
    let report = SpectralReport::assign(&vals, &levels);
    let verdict = verify_bands(&report, 0.0, 0.0, 0.0);
    assert!(verdict.passed);
    for (e, b) in report.eigenvalues.iter().zip(&report.band_assignments) {
        let BandLabel::Band(k) = b else { panic!() };
        assert!((e - *k as f64).abs() < 1e-12);
    }
}

#[test]
fn weak_perturbation_stays_in_bands() {
    let m = build_toric_code(2).unwrap();
    let levels = integer_levels(&m).unwrap();
    let j = 0.02;
    let v = random_decomposition(&m.lattice, 11, 1, j, 0.0).unwrap();
    let vals = eigvalsh(&perturbed_dense(&m, &v).unwrap());
    let report = SpectralReport::assign(&vals, &levels);
    let c1 = report.fit_c1(j);
    let delta = report.band_width(0).unwrap() / 2.0;
    let verdict = verify_bands(&report, j, c1, delta);
    assert!(verdict.passed, "{verdict:?}");
    assert!(report.gaps[0].gap > 0.5);
    assert!(report.band_width(0).unwrap() <= 0.2 * report.band_max_displacement(2).unwrap());
}

#[test]
fn band_displacement_is_linear_in_j() {
    let m = build_toric_code(2).unwrap();
    let levels = integer_levels(&m).unwrap();
    let v = random_decomposition(&m.lattice, 5, 1, 1.0, 0.0).unwrap();
    let h0 = m.hamiltonian_dense(Normalization::Projector).unwrap();
    let vd = v.to_dense(&m.lattice.all_qubits()).unwrap();
    let disp = |j: f64| {
        let vals = eigvalsh(&(&h0 + &vd * C64::new(j, 0.0)));
        // unshifted displacement from the nearest level
        vals.iter()
            .map(|e| levels.iter().map(|&k| (e - k as f64).abs()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    let (j1, j2) = (1e-3, 1e-2);
    let slope = (disp(j2) / disp(j1)).ln() / (j2 / j1).ln();
    assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
}

fn qwq_terms(m: &tqo::lattice::Model, w: f64, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = m.lattice.all_qubits();
    let d = m.dim();
    let mut total = CMat::zeros(d, d);
    for sq in m.lattice.squares(2) {
        let q = m.lattice.square_qubits(&sq);
        let pa = m.local_ground_projector(&sq).unwrap();
        let qa = CMat::identity(pa.dim(), pa.dim()) - &pa.mat;
        let x = tqo::perturbation::gue(&mut rng, 1 << q.len());
        let block = &qa * x * &qa;
        let block = &block * C64::new(w / linalg::op_norm(&block), 0.0);
        total += LocalOperator::new(q, block).unwrap().on(&all).unwrap();
    }
    total
}

#[test]
fn relative_bound_examples() {
    let m = build_toric_code(2).unwrap();
    let h0 = m.hamiltonian_dense(Normalization::Projector).unwrap();
    let zero = CMat::zeros(h0.nrows(), h0.ncols());
    assert_eq!(relative_bound(&zero, &h0).b, Some(0.0));
    let one = relative_bound(&h0, &h0).b.unwrap();
    assert!((one - 1.0).abs() < 1e-12);
    let all = m.lattice.all_qubits();
    let x0 = PauliOperator::from_letters(8, &[(0, 'X')], 0).unwrap().to_matrix(&all).unwrap();
    assert!(relative_bound(&x0, &h0).b.is_none());
}

#[test]
fn relative_bound_is_tight_and_linear() {
    let m = build_toric_code(2).unwrap();
    let h0 = m.hamiltonian_dense(Normalization::Projector).unwrap();
    let w = qwq_terms(&m, 0.1, 3);
    let b = relative_bound(&w, &h0).b.unwrap();

    // sampled ratios never exceed b
    let pinv = linalg::pinv_hermitian(&h0, 1e-10);
    let q = &h0 * &pinv;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut best = 0.0f64;
    for _ in 0..10_000 {
        let v = tqo::linalg::CVec::from_fn(h0.nrows(), |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let v = &q * v;
        let r = (&w * &v).norm() / (&h0 * &v).norm();
        best = best.max(r);
    }
    assert!(best <= b * (1.0 + 1e-12));
    // attained by the top singular vector of W H0⁺
    let a = &w * &pinv;
    let (_, vecs) = linalg::eigh(&(a.adjoint() * &a));
    let top = vecs.column(vecs.ncols() - 1).into_owned();
    let psi = &pinv * top;
    let ratio = (&w * &psi).norm() / (&h0 * &psi).norm();
    assert!((ratio - b).abs() < 1e-8);

    let ws = [0.02, 0.04, 0.08, 0.16];
    let bs: Vec<f64> = ws.iter().map(|&x| relative_bound(&qwq_terms(&m, x, 3), &h0).b.unwrap()).collect();
    let slope = (bs[3] / bs[0]).ln() / (ws[3] / ws[0]).ln();
    assert!((slope - 1.0).abs() < 0.05);
}

#[test]
fn containment_examples() {
    let n = 8;
    let gens = random_commuting(n, 6, 21);
    let all: Vec<usize> = (0..n).collect();
    let d = 1 << n;
    let mut h0 = CMat::zeros(d, d);
    let mut qs = vec![];
    for g in &gens {
        let s = g.to_matrix(&all).unwrap();
        let qg = (CMat::identity(d, d) - s) * C64::new(0.5, 0.0);
        h0 += &qg;
        qs.push(qg);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut w = CMat::zeros(d, d);
    for qg in &qs {
        let x = tqo::perturbation::gue(&mut rng, d);
        w += qg * x * qg * C64::new(0.02, 0.0);
    }
    let b = relative_bound(&w, &h0).b.unwrap();
    assert!(b < 1.0);
    let c = spectrum_containment_check(&h0, &w, b);
    assert!(c.applicable && c.passed, "{c:?}");

    let zero = CMat::zeros(d, d);
    let same = spectrum_containment_check(&h0, &zero, 0.0);
    assert!(same.passed && same.worst_excess < 1e-12);
    let skipped = spectrum_containment_check(&h0, &(&w * C64::new(100.0, 0.0)), 1.5);
    assert!(!skipped.applicable && skipped.note.is_some());
}

#[test]
fn sector_sweep_crossing() {
    for l in [2usize, 4, 6] {
        let m = build_unstable_toric_code(l, (0, 0)).unwrap();
        let np = (l * l) as f64;
        let hs: Vec<f64> = (0..=100).map(|k| k as f64 * 0.5 / 100.0 * 8.0 / np).collect();
        let sweep = sector_gap_sweep(&m, &hs).unwrap();
        assert_eq!(sweep.crossing, Some(1.0 / np), "L = {l}");
        assert_eq!(sweep.points[0].ground_minus_plaquettes, 0);
        let at = sector_gap_sweep(&m, &[4.0 / np]).unwrap();
        assert_eq!(at.points[0].ground_minus_plaquettes, l * l);
    }
}

#[test]
fn sector_energies_match_dense_at_l2() {
    for m in [build_unstable_toric_code(2, (1, 1)).unwrap(), build_toric_code(2).unwrap()] {
        for h in [0.0, 0.1, 0.25, 0.7] {
            let dense = eigvalsh(&sign_hamiltonian_with_field(&m, h).unwrap());
            let sectors = sector_spectrum(&m, h).unwrap();
            assert_eq!(dense.len(), sectors.len());
            for (a, b) in dense.iter().zip(&sectors) {
                assert!((a - b).abs() < 1e-12, "h = {h}: {a} vs {b}");
            }
        }
    }
}
