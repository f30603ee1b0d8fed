use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tqo::decomposition::{DecayClass, LocalDecomposition};
use tqo::flow::*;
use tqo::lattice::{build_toric_code, Lattice, Layout, Model, ModelKind, Normalization, Square};
use tqo::linalg::{self, eigvalsh, CMat, LocalOperator, C64, I};
use tqo::pauli::PauliOperator;
use tqo::perturbation::{gue, random_decomposition};
use tqo::Error;

fn random_hermitian(seed: u64, d: usize) -> CMat {
    gue(&mut ChaCha8Rng::seed_from_u64(seed), d)
}

fn normalized(m: CMat, norm: f64) -> CMat {
    let n = linalg::op_norm(&m);
    m * C64::new(norm / n, 0.0)
}

/// Wen's plaquette model Z X X Z on a sites-layout torus.
fn wen_model(l: usize) -> Model {
    let lat = Lattice::square(l, Layout::Sites);
    let n = lat.qubit_count();
    let mut gens = vec![];
    for x in 0..l as isize {
        for y in 0..l as isize {
            let letters = vec![
                (lat.site_qubit(x, y), 'Z'),
                (lat.site_qubit(x + 1, y), 'X'),
                (lat.site_qubit(x, y + 1), 'X'),
                (lat.site_qubit(x + 1, y + 1), 'Z'),
            ];
            gens.push(PauliOperator::from_letters(n, &letters, 0).unwrap());
        }
    }
    let squares = vec![None; gens.len()];
    Model::from_generators(lat, gens, squares, ModelKind::Custom, "wen").unwrap()
}

fn dense_h0(model: &Model) -> CMat {
    model.hamiltonian_dense(Normalization::Projector).unwrap()
}

fn qp(model: &Model) -> (CMat, CMat) {
    let p = model.ground_projector_dense().unwrap();
    let q = CMat::identity(p.nrows(), p.nrows()) - &p;
    (q, p)
}

fn off_block(model: &Model, m: &CMat) -> f64 {
    let (q, p) = qp(model);
    linalg::op_norm(&linalg::matmul3(&q, m, &p))
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn spectra_match(a: &CMat, b: &CMat, tol: f64) {
    let ea = eigvalsh(a);
    let eb = eigvalsh(b);
    let worst = ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < tol, "spectra differ by {worst:e}");
}

/// Block-diagonal W on Λ at strength j_d.
fn block_diagonal_w(model: &Model, seed: u64, j_d: f64) -> LocalDecomposition {
    let lat = model.lattice;
    let all = lat.all_qubits();
    let x = random_hermitian(seed, model.dim());
    let solver = LocalSolver::new(model, &lat.full()).unwrap();
    let b = solver.block_part(&LocalOperator::new(all.clone(), x).unwrap()).unwrap();
    let b = normalized(b.mat, j_d);
    let mut w = LocalDecomposition::new(lat);
    w.add(lat.full(), &LocalOperator::new(all, b).unwrap()).unwrap();
    w
}

#[test]
fn e_super_of_zero_is_zero() {
    let model = build_toric_code(2).unwrap();
    let a = model.lattice.full();
    let o = LocalOperator::zero(model.lattice.square_qubits(&a));
    let e = e_super(&model, &a, &o).unwrap();
    assert!(e.is_zero(0.0));
}

#[test]
fn e_super_is_antihermitian_and_contracting() {
    let model = build_toric_code(4).unwrap();
    let a = Square { r: 2, x: 1, y: 1 };
    let solver = LocalSolver::new(&model, &a).unwrap();
    for seed in 0..1000 {
        let o = LocalOperator::new(solver.register.clone(), random_hermitian(seed, solver.dim())).unwrap();
        let e = solver.e_super(&o).unwrap();
        assert!(linalg::antihermiticity_defect(&e.mat) < 1e-12);
        assert!(e.norm() <= o.norm() * (1.0 + 1e-12), "seed {seed}");
    }
}

#[test]
fn e_super_contracts_on_larger_patch() {
    let model = wen_model(4);
    let a = Square { r: 3, x: 0, y: 0 };
    let solver = LocalSolver::new(&model, &a).unwrap();
    assert_eq!(solver.dim(), 512);
    for seed in 0..40 {
        let o = LocalOperator::new(solver.register.clone(), random_hermitian(seed, 512)).unwrap();
        let e = solver.e_super(&o).unwrap();
        assert!(linalg::antihermiticity_defect(&e.mat) < 1e-12);
        assert!(e.norm() <= o.norm() * (1.0 + 1e-12));
    }
}

#[test]
fn e_super_removes_off_diagonal_blocks() {
    let model = build_toric_code(2).unwrap();
    let lat = model.lattice;
    let a = lat.full();
    let (q, p) = qp(&model);
    let h0 = dense_h0(&model);
    for seed in 0..5 {
        let x = random_hermitian(seed, model.dim());
        let o = &x - linalg::matmul3(&p, &x, &p);
        let op = LocalOperator::new(lat.all_qubits(), o.clone()).unwrap();
        let e = e_super(&model, &a, &op).unwrap().mat;
        let r = linalg::matmul3(&q, &(linalg::commutator(&e, &h0) + &o), &p);
        assert!(linalg::op_norm(&r) < 1e-10);
    }
}

#[test]
fn pad_boundary_relabels_without_changing_the_sum() {
    let lat = Lattice::square(4, Layout::Edges);
    let empty = LocalDecomposition::new(lat);
    assert!(pad_boundary(&empty, 1).unwrap().is_empty());

    let mut dec = LocalDecomposition::new(lat);
    for (k, (x, y)) in [(0, 0), (1, 0), (1, 1)].into_iter().enumerate() {
        let sq = Square { r: 1, x, y };
        let reg = lat.square_qubits(&sq);
        let m = normalized(random_hermitian(k as u64, 4), 0.1 * (-0.5f64).exp());
        dec.add(sq, &LocalOperator::new(reg, m).unwrap()).unwrap();
    }
    dec.claim(DecayClass::new(0.1, 0.5, 1.0).unwrap()).unwrap();
    let padded = pad_boundary(&dec, 1).unwrap();
    let reg: Vec<usize> = dec.terms().fold(vec![], |acc, t| linalg::union_register(&acc, &t.op.qubits));
    let before = dec.to_dense(&reg).unwrap();
    let after = padded.to_dense(&reg).unwrap();
    assert!(linalg::max_abs_diff(&before, &after) < 1e-15);
    assert!(padded.terms().all(|t| t.square.r == 3));
    let class = padded.class.unwrap();
    assert!(padded.check_class(&class).passed);
    assert!((class.j - 3.0 * 0.1 * 1f64.exp()).abs() < 1e-12);
}

#[test]
fn linearized_solution_trivial_cases() {
    let model = build_toric_code(2).unwrap();
    let lat = model.lattice;
    let zero = LocalDecomposition::new(lat);
    let sol = solve_linearized(&model, &zero, &zero, 4).unwrap();
    assert!(sol.s.is_empty());

    // W = 0: one step of the series is exact.
    let v = random_decomposition(&lat, 3, 1, 0.05, 0.5).unwrap();
    let sol = solve_linearized(&model, &v, &zero, 8).unwrap();
    assert_eq!(sol.depth(), 1);
    assert!(sol.residuals[0] == 0.0);
    assert!(sol.s.antihermiticity_defect() < 1e-12);
    let all = lat.all_qubits();
    let s = sol.s.to_dense(&all).unwrap();
    let vd = v.to_dense(&all).unwrap();
    let full = linalg::commutator(&s, &dense_h0(&model)) + vd;
    assert!(off_block(&model, &full) < 1e-10);
}

#[test]
fn linearized_residual_contracts_with_w_strength() {
    let model = build_toric_code(2).unwrap();
    let lat = model.lattice;
    let all = lat.all_qubits();
    let v = random_decomposition(&lat, 11, 1, 0.05, 0.5).unwrap();
    let mut ratios = vec![];
    for &j_d in &[0.01, 0.02, 0.04] {
        let w = block_diagonal_w(&model, 5, j_d);
        let sol = solve_linearized(&model, &v, &w, 3).unwrap();
        assert_eq!(sol.depth(), 3);
        let r = &sol.residuals;
        assert!(r[1] < r[0] && r[2] < r[1]);
        ratios.push(r[2] / r[1]);
        // the reported residual is the full off-diagonal defect
        let s = sol.s.to_dense(&all).unwrap();
        let hw = dense_h0(&model) + w.to_dense(&all).unwrap();
        let full = linalg::commutator(&s, &hw) + v.to_dense(&all).unwrap();
        assert!((off_block(&model, &full) - r[2]).abs() < 1e-10);
    }
    for k in 1..ratios.len() {
        let scale = ratios[k] / ratios[k - 1];
        assert!((scale - 2.0).abs() < 0.3, "ratio scaling {scale}");
    }
}

#[test]
fn linearized_series_diverges_for_strong_w() {
    let model = build_toric_code(2).unwrap();
    let lat = model.lattice;
    let v = random_decomposition(&lat, 2, 1, 0.05, 0.5).unwrap();
    let w = block_diagonal_w(&model, 9, 5.0);
    match solve_linearized(&model, &v, &w, 8) {
        Err(Error::Divergence { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|s| s.residuals)),
    }
}

#[test]
fn commutator_decomposition_is_exact() {
    let lat = Lattice::square(4, Layout::Edges);
    let mut s = LocalDecomposition::new(lat);
    let mut v = LocalDecomposition::new(lat);
    let s_sq = [Square { r: 1, x: 0, y: 0 }, Square { r: 2, x: 0, y: 1 }];
    let v_sq = [Square { r: 1, x: 1, y: 1 }, Square { r: 1, x: 0, y: 0 }];
    for (k, sq) in s_sq.iter().enumerate() {
        let reg = lat.square_qubits(sq);
        let m = normalized(random_hermitian(k as u64, 1 << reg.len()), 0.1) * I;
        s.add(*sq, &LocalOperator::new(reg, m).unwrap()).unwrap();
    }
    for (k, sq) in v_sq.iter().enumerate() {
        let reg = lat.square_qubits(sq);
        let m = normalized(random_hermitian(10 + k as u64, 1 << reg.len()), 0.2);
        v.add(*sq, &LocalOperator::new(reg, m).unwrap()).unwrap();
    }
    let out = commutator_decomposition(&s, &v, false).unwrap();
    let mut reg = vec![];
    for t in s.terms().chain(v.terms()) {
        reg = linalg::union_register(&reg, &t.op.qubits);
    }
    let sd = s.to_dense(&reg).unwrap();
    let vd = v.to_dense(&reg).unwrap();
    let diff = linalg::max_abs_diff(&out.to_dense(&reg).unwrap(), &linalg::commutator(&sd, &vd));
    assert!(diff < 1e-12, "{diff}");
    for t in out.terms() {
        assert!(t.square.r <= 3);
    }
    // class of the output against c·K·J with a fitted c
    let fitted = out.fitted_class(0.5, 0.0);
    let c = fitted.j / (0.1 * 0.2);
    assert!(out.check_class(&DecayClass::new(c * 0.1 * 0.2, 0.5, 0.0).unwrap()).passed);
    assert!(c < 2.0 * (0.5f64 * 3.0).exp());

    // disjoint supports commute
    let mut far = LocalDecomposition::new(lat);
    let sq = Square { r: 1, x: 3, y: 3 };
    let reg = lat.square_qubits(&sq);
    far.add(sq, &LocalOperator::new(reg, random_hermitian(99, 4)).unwrap()).unwrap();
    let mut near = LocalDecomposition::new(lat);
    let sq = Square { r: 1, x: 1, y: 1 };
    let reg = lat.square_qubits(&sq);
    near.add(sq, &LocalOperator::new(reg, random_hermitian(98, 4)).unwrap()).unwrap();
    assert!(commutator_decomposition(&far, &near, true).unwrap().is_empty());
}

#[test]
fn chi_rule_is_canonical() {
    let lat = Lattice::square(6, Layout::Edges);
    let a = Square { r: 2, x: 1, y: 1 };
    let b = Square { r: 1, x: 2, y: 2 };
    let c = chi(&lat, &a, &b, false);
    assert_eq!(c, Square { r: 3, x: 0, y: 0 });
    let c = chi(&lat, &a, &b, true);
    assert_eq!(c.r, 3);
    assert!(lat.square_within(&lat.grow(&b, 1), &c));
    assert!(lat.square_within(&a, &c));
}

#[test]
fn transformed_diagonal_first_order_is_block_part() {
    let model = build_toric_code(2).unwrap();
    let lat = model.lattice;
    let zero = LocalDecomposition::new(lat);
    let sol = solve_linearized(&model, &zero, &zero, 1).unwrap();
    assert!(transformed_diagonal(&model, &sol).unwrap().is_empty());

    let v = random_decomposition(&lat, 21, 1, 0.05, 0.5).unwrap();
    let sol = solve_linearized(&model, &v, &zero, 1).unwrap();
    let wt = transformed_diagonal(&model, &sol).unwrap();
    let all = lat.all_qubits();
    let (q, p) = qp(&model);
    for t in sol.v.terms() {
        let m = t.op.on(&all).unwrap();
        let expect = linalg::matmul3(&p, &m, &p) + linalg::matmul3(&q, &m, &q);
        let got = wt.get(&t.square).unwrap().op.on(&all).unwrap();
        assert!(linalg::max_abs_diff(&expect, &got) < 1e-12);
    }
}

#[test]
fn transformed_diagonal_matches_definition_up_to_truncation() {
    let model = build_toric_code(2).unwrap();
    let lat = model.lattice;
    let all = lat.all_qubits();
    let v = random_decomposition(&lat, 4, 1, 0.05, 0.5).unwrap();
    let w = block_diagonal_w(&model, 6, 0.05);
    let sol = solve_linearized(&model, &v, &w, 4).unwrap();
    let wt = transformed_diagonal(&model, &sol).unwrap();
    let s = sol.s.to_dense(&all).unwrap();
    let hw = dense_h0(&model) + w.to_dense(&all).unwrap();
    let target = linalg::commutator(&s, &hw) + sol.v.to_dense(&all).unwrap();
    let got = wt.to_dense(&all).unwrap() + sol.remainder.to_dense(&all).unwrap();
    assert!(linalg::max_abs_diff(&target, &got) < 1e-10);
    // W̃ strength against c J / (1 − c J_d) with c fitted at this J_d
    let j = v.fitted_class(0.5, 0.0).j;
    let jt = wt.fitted_class(0.5, 0.0).j;
    let c = jt / j;
    assert!(jt <= c * j / (1.0 - c * 0.05).max(1e-3) + 1e-15);
    assert!(c < 10.0);
}

#[test]
fn omega_trivial_and_dense_oracle() {
    let lat = Lattice::new(6, 1, Layout::Sites).unwrap();
    let mut h = LocalDecomposition::new(lat);
    let b = Square { r: 2, x: 2, y: 0 };
    let reg = lat.square_qubits(&b);
    h.add(b, &LocalOperator::new(reg.clone(), random_hermitian(1, 4)).unwrap()).unwrap();
    let s0 = LocalDecomposition::new(lat);
    let rem = second_order_remainder(&s0, &h, 4).unwrap();
    assert!(rem.dec.terms().all(|t| t.op.is_zero(1e-15)));

    let mut s = LocalDecomposition::new(lat);
    let a = Square { r: 2, x: 1, y: 0 };
    let sreg = lat.square_qubits(&a);
    s.add(a, &LocalOperator::new(sreg, normalized(random_hermitian(2, 4), 0.3) * I).unwrap()).unwrap();
    let rem = second_order_remainder(&s, &h, 4).unwrap();
    let all = lat.all_qubits();
    let sd = s.to_dense(&all).unwrap();
    let hd = h.to_dense(&all).unwrap();
    let u = linalg::expm_antihermitian(&sd);
    let expect = linalg::matmul3(&u, &hd, &u.adjoint()) - &hd - linalg::commutator(&sd, &hd);
    let diff = linalg::max_abs_diff(&rem.dec.to_dense(&all).unwrap(), &expect);
    assert!(diff < 1e-12, "{diff}");
    assert!(!rem.truncated);
}

#[test]
fn omega_shells_decay_at_the_generator_rate() {
    let lat = Lattice::new(10, 1, Layout::Sites).unwrap();
    let mu = 1.2;
    let k = 0.2;
    let mut s = LocalDecomposition::new(lat);
    let mut seed = 100;
    for r in 1..=6 {
        for sq in lat.squares(r) {
            let reg = lat.square_qubits(&sq);
            seed += 1;
            let m = normalized(random_hermitian(seed, 1 << reg.len()), k * (-mu * r as f64).exp()) * I;
            s.add(sq, &LocalOperator::new(reg, m).unwrap()).unwrap();
        }
    }
    let mut h = LocalDecomposition::new(lat);
    let b = Square { r: 2, x: 4, y: 0 };
    let reg = lat.square_qubits(&b);
    h.add(b, &LocalOperator::new(reg, random_hermitian(7, 4)).unwrap()).unwrap();
    let rem = second_order_remainder(&s, &h, 4).unwrap();
    assert_eq!(rem.shells.len(), 5);
    let xs: Vec<f64> = rem.shells.iter().map(|s| s.shell as f64).collect();
    let ys: Vec<f64> = rem.shells.iter().map(|s| s.norm.ln()).collect();
    let slope = lsq_slope(&xs, &ys);
    assert!(slope < 0.0);
    assert!((slope.abs() - mu).abs() <= 0.3 * mu, "slope {slope}");
    // the shells reassemble ω(H)
    let all = lat.all_qubits();
    let sd = s.to_dense(&all).unwrap();
    let hd = h.to_dense(&all).unwrap();
    let expect = omega(&sd, &hd);
    assert!(linalg::max_abs_diff(&rem.dec.to_dense(&all).unwrap(), &expect) < 1e-12);
}

#[test]
fn flow_step_with_zero_v_only_advances_level() {
    let model = build_toric_code(2).unwrap();
    let cfg = FlowConfig::for_lattice(&model.lattice, 0.5);
    let state = FlowState::initial(&model, &LocalDecomposition::new(model.lattice), &cfg).unwrap();
    let (next, report) = flow_step(&model, &state, &cfg).unwrap();
    assert_eq!(next.level, 1);
    assert!(next.w_parts.is_empty());
    assert!(next.v.is_empty());
    assert_eq!(next.lambda, 0.0);
    assert_eq!(next.e_norm, 0.0);
    assert_eq!(report.residual, Some(0.0));
}

#[test]
fn flow_step_squares_the_off_diagonal_part() {
    let model = build_toric_code(2).unwrap();
    let cfg = FlowConfig::for_lattice(&model.lattice, 0.5);
    let js = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let mut xs = vec![];
    let mut ys = vec![];
    for &j in &js {
        let v = random_decomposition(&model.lattice, 8, 1, j, 0.5).unwrap();
        let state = FlowState::initial(&model, &v, &cfg).unwrap();
        let r0 = state.block_residual(&model).unwrap();
        let (next, report) = flow_step(&model, &state, &cfg).unwrap();
        let r1 = report.residual.unwrap();
        assert!(r1 < r0);
        spectra_match(&state.hamiltonian_dense(&model).unwrap(), &next.hamiltonian_dense(&model).unwrap(), 1e-9);
        xs.push(j.ln());
        ys.push(r1.ln());
    }
    let slope = lsq_slope(&xs, &ys);
    assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
}

#[test]
fn two_flow_steps_preserve_the_spectrum() {
    let model = build_toric_code(2).unwrap();
    let cfg = FlowConfig::for_lattice(&model.lattice, 0.5);
    let v = random_decomposition(&model.lattice, 12, 2, 0.05, 0.5).unwrap();
    let s0 = FlowState::initial(&model, &v, &cfg).unwrap();
    let (s1, r1) = flow_step(&model, &s0, &cfg).unwrap();
    let (s2, r2) = flow_step(&model, &s1, &cfg).unwrap();
    assert_eq!(s2.level, 2);
    assert!(r2.series_depth >= 1);
    assert!(r2.residual.unwrap() < r1.residual.unwrap());
    for part in &s2.w_parts {
        let solver = LocalSolver::new(&model, &model.lattice.full()).unwrap();
        for t in part.terms() {
            assert!(solver.off_block_norm(&t.op).unwrap() < 1e-10);
        }
    }
    let h0 = s0.hamiltonian_dense(&model).unwrap();
    spectra_match(&h0, &s2.hamiltonian_dense(&model).unwrap(), 1e-9);
}

#[test]
fn degree_reset_examples() {
    let c = DecayClass::new(0.0, 1.0, 2.0).unwrap();
    assert_eq!(degree_reset(&c, 0.5, 4.0).unwrap(), DecayClass { j: 0.0, mu: 1.0, alpha: 6.0 });
    let c = DecayClass::new(0.01, 1.0, 2.0).unwrap();
    let r = degree_reset(&c, 0.5, 4.0).unwrap();
    let cp = (4.0 / std::f64::consts::E).powi(4);
    assert!((r.j - cp * 0.01f64.sqrt()).abs() < 1e-15);
    assert!((r.mu - (1.0 - 0.01f64.powf(0.125))).abs() < 1e-15);
    assert_eq!(r.alpha, 6.0);
    let c = DecayClass::new(0.5, 0.1, 0.0).unwrap();
    assert!(matches!(degree_reset(&c, 0.5, 1.0), Err(Error::DecayExhausted(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn degree_reset_keeps_members(j in 1e-6f64..0.05, mu in 0.5f64..2.0, alpha in 0.0f64..3.0,
                                  eps in 0.1f64..0.9, gain in 0.5f64..6.0, fill in 0.0f64..1.0) {
        let c = DecayClass::new(j, mu, alpha).unwrap();
        if let Ok(r) = degree_reset(&c, eps, gain) {
            for size in 1..40 {
                let norm = fill * c.envelope(size);
                prop_assert!(r.admits(size, norm), "r = {size}");
            }
        }
    }

    #[test]
    fn e_super_properties_hold(seed in any::<u64>()) {
        let model = build_toric_code(2).unwrap();
        let a = Square { r: 2, x: 0, y: 0 };
        let solver = LocalSolver::new(&model, &a).unwrap();
        let o = LocalOperator::new(solver.register.clone(), random_hermitian(seed, solver.dim())).unwrap();
        let e = solver.e_super(&o).unwrap();
        prop_assert!(linalg::antihermiticity_defect(&e.mat) < 1e-12);
        prop_assert!(e.norm() <= o.norm() * (1.0 + 1e-12));
        let b = solver.block_part(&o).unwrap();
        prop_assert!(solver.off_block_norm(&b).unwrap() < 1e-12);
    }

    #[test]
    fn commutator_decomposition_exact_random(seed in any::<u64>()) {
        use rand::Rng;
        let lat = Lattice::square(4, Layout::Edges);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = LocalDecomposition::new(lat);
        let mut v = LocalDecomposition::new(lat);
        for k in 0..2 {
            let sq = Square { r: 1, x: rng.random_range(0..2), y: rng.random_range(0..2) };
            let reg = lat.square_qubits(&sq);
            s.add(sq, &LocalOperator::new(reg, random_hermitian(seed ^ k, 4) * I).unwrap()).unwrap();
            let sq = Square { r: 1, x: rng.random_range(0..2), y: rng.random_range(0..2) };
            let reg = lat.square_qubits(&sq);
            v.add(sq, &LocalOperator::new(reg, random_hermitian(seed ^ (k + 7), 4)).unwrap()).unwrap();
        }
        let out = commutator_decomposition(&s, &v, true).unwrap();
        let mut reg = vec![];
        for t in s.terms().chain(v.terms()).chain(out.terms()) {
            reg = linalg::union_register(&reg, &t.op.qubits);
        }
        let target = linalg::commutator(&s.to_dense(&reg).unwrap(), &v.to_dense(&reg).unwrap());
        prop_assert!(linalg::max_abs_diff(&out.to_dense(&reg).unwrap(), &target) < 1e-10);
    }
}

#[test]
fn scalar_flow_zero_coupling() {
    let p = ScalarFlowParams { j: 0.0, mu: 1.0, c1: 2.0, c2: 1.0, c3: 0.5, epsilon: 0.2, l: 8.0, c_e: 1.0, target: None };
    let t = scalar_flow(&p, 6).unwrap();
    for pt in &t.points {
        assert_eq!(pt.j, 0.0);
        assert_eq!(pt.j_d, 0.0);
        assert_eq!(pt.e_bound, 0.0);
        assert_eq!(pt.mu, 2f64.powi(-(pt.n as i32)));
    }
}

#[test]
fn scalar_flow_closed_form() {
    let c1 = 4.0;
    let j = 0.05;
    let p = ScalarFlowParams { j, mu: 1.0, c1, c2: 1.0, c3: 0.0, epsilon: 0.0, l: 8.0, c_e: 1.0, target: Some(1e-11) };
    let t = scalar_flow(&p, 5).unwrap();
    for pt in &t.points {
        let exact = closed_form_j(j, 1.0 / c1, pt.n);
        assert!((pt.j - exact).abs() <= 1e-12 * exact);
        assert_eq!(pt.mu, 2f64.powi(-(pt.n as i32)));
    }
    assert_eq!(t.target_level, Some(4));
}

#[test]
fn scalar_flow_residual_shape() {
    // n = log_4 L levels: −log J(n) grows like √L.
    let p = ScalarFlowParams { j: 0.05, mu: 1.0, c1: 4.0, c2: 1.0, c3: 0.0, epsilon: 0.0, l: 1.0, c_e: 1.0, target: None };
    let mut xs = vec![];
    let mut ys = vec![];
    for k in 3..=7 {
        let l = 4f64.powi(k);
        let t = scalar_trajectory(&ScalarFlowParams { l, ..p.clone() }, k as usize).unwrap();
        let last = t.points.last().unwrap();
        xs.push(l.ln());
        ys.push((-last.j.ln()).ln());
    }
    let slope = lsq_slope(&xs, &ys);
    assert!((slope - 0.5).abs() < 0.05, "slope {slope}");
}

#[test]
fn scalar_flow_breakdown_and_threshold() {
    let p = ScalarFlowParams { j: 0.2, mu: 0.2, c1: 2.0, c2: 1.0, c3: 0.01, epsilon: 0.3, l: 8.0, c_e: 1.0, target: None };
    assert!(matches!(scalar_flow(&p, 10), Err(Error::FlowBreakdown(_))));
    let jt = scalar_threshold(&p, 4, 0.5, 1e-12).unwrap();
    assert!(jt > 0.0 && jt < 0.2);
    let ok = scalar_trajectory(&ScalarFlowParams { j: jt * 0.99, ..p.clone() }, 4).unwrap();
    let bad = scalar_trajectory(&ScalarFlowParams { j: jt * 1.01, ..p.clone() }, 4).unwrap();
    assert!(ok.mu_positive && !bad.mu_positive);
    assert!(scalar_flow(&ScalarFlowParams { epsilon: 1.5, ..p }, 3).is_err());
}
