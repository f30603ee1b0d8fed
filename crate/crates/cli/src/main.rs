use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use tqo::decomposition::LocalDecomposition;
use tqo::flow::{flow_step, scalar_threshold, scalar_trajectory, FlowConfig, FlowState, ScalarFlowParams};
use tqo::lattice::{build_toric_code, build_unstable_toric_code, Lattice, Layout, Model, Normalization};
use tqo::linalg::{self, LocalOperator, C64};
use tqo::locality::{
    continue_projector, dress_operator, lr_commutator_norm, mixed_field_chain, BandWindow, ContinuationPath, Integrator,
};
use tqo::pauli::PauliOperator;
use tqo::perturbation::{random_perturbation, PerturbationSpec};
use tqo::spectral::{integer_levels, low_spectrum, sector_gap_sweep, verify_bands, SpectralReport};
use tqo::tqo::{
    check_tqo1_exact_all, check_tqo1_stabilizer, check_tqo2_exact_all, check_tqo2_stabilizer, default_l_star, Condition,
    Method,
};

const FILTER_MASK: &str = "m(w) = s(2|w|), s(x) = e^{-1/x} / (e^{-1/x} + e^{-1/(1-x)})";

#[derive(Parser)]
#[command(name = "tqo", version, about = "Topological order and stability laboratory", arg_required_else_help = true)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for the report, config.json and manifest.json; stdout otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// TQO-1 / TQO-2 verdict for a model.
    Check(CheckArgs),
    /// Low spectrum of H0 (+ V) with band assignment.
    Spectrum(SpectrumArgs),
    /// Closed-form sector sweep of h Σ_p B_p (CSV).
    Sweep(SweepArgs),
    /// Flow-equation steps on a dense model.
    Flow(FlowArgs),
    /// Scalar flow recursion (CSV).
    ScalarFlow(ScalarArgs),
    /// ‖[O_A(t), O_B]‖ over a list of times (CSV).
    LiebRobinson(LrArgs),
    /// Quasi-adiabatic continuation of a spectral band.
    Continue(ContinueArgs),
    /// Seeded random perturbation spec (JSON).
    GenPerturbation(GenArgs),
    /// Re-runs a persisted config.json.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct ModelSource {
    /// Model file: `lattice L=<int> layout=<edges|sites>` then one generator per line.
    #[arg(long, conflicts_with = "builtin")]
    model: Option<PathBuf>,
    /// toric:<L> or unstable-toric:<L>.
    #[arg(long)]
    builtin: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CondArg {
    Tqo1,
    Tqo2,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Exact,
    Stabilizer,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct CheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: ModelSource,
    #[arg(long, value_enum, default_value = "tqo2")]
    condition: CondArg,
    #[arg(long, value_enum, default_value = "stabilizer")]
    method: MethodArg,
    /// Largest square size checked (default L/2 − 1).
    #[arg(long)]
    l_star: Option<usize>,
    /// Weight cutoff of the TQO-1 distance search.
    #[arg(long, default_value_t = 4)]
    cutoff: usize,
    /// Proportionality f(L*) = factor·L* of the TQO-1 distance threshold.
    #[arg(long, default_value_t = 1.0)]
    factor: f64,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: ModelSource,
    /// Perturbation spec (JSON, as written by gen-perturbation).
    #[arg(long)]
    perturbation: Option<PathBuf>,
    /// Number of lowest eigenvalues (default: all when dense, else 16).
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SweepParam {
    H,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: ModelSource,
    #[arg(long, value_enum, default_value = "h")]
    param: SweepParam,
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    #[arg(long, default_value_t = 0.5)]
    to: f64,
    /// Number of intervals; steps + 1 points are written.
    #[arg(long, default_value_t = 100)]
    steps: usize,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct FlowArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: ModelSource,
    #[arg(long)]
    perturbation: PathBuf,
    #[arg(long, default_value_t = 2)]
    levels: usize,
    /// Decay rate of the flow config (default: the spec's μ).
    #[arg(long)]
    mu: Option<f64>,
    /// Series depth per step.
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct ScalarArgs {
    #[arg(long = "J")]
    j: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long, default_value_t = 0.0)]
    c3: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long = "L", default_value_t = 8.0)]
    l: f64,
    #[arg(long, default_value_t = 1.0)]
    c_e: f64,
    #[arg(long)]
    target: Option<f64>,
    #[arg(long, default_value_t = 10)]
    levels: usize,
    /// Also bisect for the largest J whose μ stays positive, searching below this value.
    #[arg(long)]
    threshold_below: Option<f64>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct LrArgs {
    /// Model file or builtin; builtin also accepts chain:<n>, an open mixed-field Ising chain.
    #[command(flatten)]
    #[serde(flatten)]
    source: ModelSource,
    #[arg(long)]
    perturbation: Option<PathBuf>,
    /// Two qubit regions "A,B"; qubits inside a region are joined by '+'.
    #[arg(long)]
    regions: String,
    /// Comma-separated times.
    #[arg(long)]
    times: String,
    /// Pauli letter applied on every qubit of A.
    #[arg(long, default_value = "Z")]
    op_a: char,
    /// Pauli letter applied on every qubit of B.
    #[arg(long, default_value = "Z")]
    op_b: char,
    /// Chain coupling K.
    #[arg(long = "K", default_value_t = 1.0)]
    k: f64,
    /// Chain transverse field g.
    #[arg(long, default_value_t = 1.05)]
    g: f64,
    /// Chain longitudinal field h.
    #[arg(long, default_value_t = 0.5)]
    h: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SchemeArg {
    Midpoint,
    FirstOrder,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct ContinueArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: ModelSource,
    #[arg(long)]
    perturbation: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Band index k of H0.
    #[arg(long, default_value_t = 0)]
    band: usize,
    #[arg(long, value_enum, default_value = "midpoint")]
    scheme: SchemeArg,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct GenArgs {
    /// Lattice of this model (alternatively --L and --layout).
    #[command(flatten)]
    #[serde(flatten)]
    source: ModelSource,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long, default_value = "edges")]
    layout: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest square size q.
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[arg(long = "J")]
    j: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct ReplayArgs {
    #[arg(long)]
    config: PathBuf,
}

enum Failure {
    Usage(String),
    Core(tqo::Error),
}

impl From<tqo::Error> for Failure {
    fn from(e: tqo::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        use tqo::Error::*;
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e {
                ResourceCap { .. } => 3,
                Parse(_) | Invalid(_) | Precondition(_) | Io(_) | QubitMismatch(..) => 2,
                _ => 1,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(Failure::Usage(msg.into()))
}

/// A finished command: the report body, its file name, a JSON summary for the
/// manifest and whether the run passed.
struct Outcome {
    file: &'static str,
    body: String,
    summary: Value,
    passed: bool,
}

fn read(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn builtin_size(spec: &str, prefix: &str) -> Res<Option<usize>> {
    match spec.strip_prefix(prefix) {
        Some(l) => l.parse().map(Some).map_err(|_| Failure::Usage(format!("bad size in --builtin {spec}"))),
        None => Ok(None),
    }
}

fn load_model(src: &ModelSource) -> Res<Model> {
    match (&src.model, &src.builtin) {
        (Some(p), _) => Ok(Model::from_model_file(&read(p)?)?),
        (None, Some(b)) => {
            if let Some(l) = builtin_size(b, "toric:")? {
                Ok(build_toric_code(l)?)
            } else if let Some(l) = builtin_size(b, "unstable-toric:")? {
                Ok(build_unstable_toric_code(l, (0, 0))?)
            } else {
                usage(format!("unknown builtin '{b}'; expected toric:<L> or unstable-toric:<L>"))
            }
        }
        (None, None) => usage("one of --model or --builtin is required"),
    }
}

fn load_perturbation(path: &Path, lattice: &Lattice) -> Res<(PerturbationSpec, LocalDecomposition)> {
    let spec = PerturbationSpec::from_json(&read(path)?)?;
    if spec.lattice()? != *lattice {
        return usage("perturbation lattice does not match the model lattice");
    }
    let dec = spec.to_decomposition()?;
    Ok((spec, dec))
}

fn decay_record(spec: &PerturbationSpec, dec: &LocalDecomposition) -> Res<Value> {
    let claimed = spec.claimed_class()?;
    Ok(json!({ "claimed": claimed, "verified": dec.check_class(&claimed) }))
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serialisable report") + "\n"
}

fn run_check(a: &CheckArgs) -> Res<Outcome> {
    let model = load_model(&a.source)?;
    let l_star = a.l_star.unwrap_or_else(|| default_l_star(model.lattice.size()));
    let report = match (a.condition, a.method) {
        (CondArg::Tqo2, MethodArg::Stabilizer) => check_tqo2_stabilizer(&model, l_star)?,
        (CondArg::Tqo2, MethodArg::Exact) => check_tqo2_exact_all(&model, l_star)?,
        (CondArg::Tqo1, MethodArg::Stabilizer) => check_tqo1_stabilizer(&model, l_star, a.cutoff, a.factor)?,
        (CondArg::Tqo1, MethodArg::Exact) => check_tqo1_exact_all(&model, l_star)?,
    };
    debug_assert!(matches!(report.condition, Condition::Tqo1 | Condition::Tqo2));
    debug_assert!(matches!(report.method, Method::Exact | Method::Stabilizer));
    Ok(Outcome {
        file: "report.json",
        summary: json!({ "passed": report.passed, "witnesses": report.witnesses.len() }),
        passed: report.passed,
        body: pretty(&json!({ "model": model.label, "report": report })),
    })
}

fn run_spectrum(a: &SpectrumArgs) -> Res<Outcome> {
    let model = load_model(&a.source)?;
    let pert = match &a.perturbation {
        Some(p) => Some(load_perturbation(p, &model.lattice)?),
        None => None,
    };
    let extra: Vec<LocalOperator> = pert
        .as_ref()
        .map(|(_, d)| d.terms().map(|t| t.op.clone()).collect())
        .unwrap_or_default();
    let dense = linalg::check_dense("spectrum", model.dim()).is_ok();
    let count = a.count.unwrap_or(if dense { model.dim() } else { 16 });
    let h = model.hamiltonian_operator(Normalization::Projector, &extra)?;
    let vals = low_spectrum(&h, count)?;
    let levels = if dense { integer_levels(&model)? } else { (0..=model.generators().len()).collect() };
    let report = SpectralReport::assign(&vals, &levels);
    let mut out = json!({ "model": model.label, "spectrum": report });
    let mut passed = true;
    if let Some((spec, dec)) = &pert {
        let c1 = report.fit_c1(spec.j);
        let delta = report.band_width(0).unwrap_or(0.0);
        let verdict = verify_bands(&report, spec.j, c1, delta);
        passed = verdict.passed;
        out["J"] = json!(spec.j);
        out["c1"] = json!(c1);
        out["delta"] = json!(delta);
        out["verdict"] = json!(verdict);
        out["decay"] = decay_record(spec, dec)?;
    }
    Ok(Outcome {
        file: "spectrum.json",
        summary: json!({ "count": vals.len(), "passed": passed, "gaps": report.gaps }),
        passed,
        body: pretty(&out),
    })
}

fn run_sweep(a: &SweepArgs) -> Res<Outcome> {
    let model = load_model(&a.source)?;
    if a.steps == 0 || !(a.to >= a.from) {
        return usage("sweep needs --steps ≥ 1 and --to ≥ --from");
    }
    let hs: Vec<f64> = (0..=a.steps).map(|k| a.from + (a.to - a.from) * k as f64 / a.steps as f64).collect();
    let sweep = sector_gap_sweep(&model, &hs)?;
    let mut body = String::from("h,ground_energy,ground_minus_plaquettes,gap,exact_gap\n");
    for p in &sweep.points {
        body.push_str(&format!("{:e},{:e},{},{:e},{}\n", p.h, p.ground_energy, p.ground_minus_plaquettes, p.gap, p.exact_gap));
    }
    Ok(Outcome {
        file: "sweep.csv",
        summary: json!({ "n_p": sweep.n_p, "method": sweep.method, "crossing": sweep.crossing, "one_over_n_p": 1.0 / sweep.n_p as f64 }),
        passed: true,
        body,
    })
}

fn run_flow(a: &FlowArgs) -> Res<Outcome> {
    let model = load_model(&a.source)?;
    let (spec, dec) = load_perturbation(&a.perturbation, &model.lattice)?;
    let mut cfg = FlowConfig::for_lattice(&model.lattice, a.mu.unwrap_or(spec.mu));
    if let Some(d) = a.depth {
        cfg.depth = d;
    }
    let mut state = FlowState::initial(&model, &dec, &cfg)?;
    let initial = state.block_residual(&model)?;
    let mut steps = vec![];
    for _ in 0..a.levels {
        let (next, report) = flow_step(&model, &state, &cfg)?;
        steps.push(report);
        state = next;
    }
    let out = json!({
        "model": model.label,
        "config": { "l_star": cfg.l_star, "depth": cfg.depth, "j_max": cfg.j_max, "mu": cfg.mu, "alpha": cfg.alpha },
        "decay": decay_record(&spec, &dec)?,
        "initial_residual": initial,
        "steps": steps,
    });
    let residuals: Vec<Option<f64>> = steps.iter().map(|s| s.residual).collect();
    Ok(Outcome { file: "flow.json", summary: json!({ "initial_residual": initial, "residuals": residuals }), passed: true, body: pretty(&out) })
}

fn run_scalar(a: &ScalarArgs) -> Res<Outcome> {
    let p = ScalarFlowParams {
        j: a.j,
        mu: a.mu,
        c1: a.c1,
        c2: a.c2,
        c3: a.c3,
        epsilon: a.epsilon,
        l: a.l,
        c_e: a.c_e,
        target: a.target,
    };
    let traj = scalar_trajectory(&p, a.levels)?;
    let threshold = match a.threshold_below {
        Some(hi) => Some(scalar_threshold(&p, a.levels, hi, 1e-12 * hi)?),
        None => None,
    };
    Ok(Outcome {
        file: "scalar_flow.csv",
        summary: json!({
            "mu_positive": traj.mu_positive,
            "breakdown_level": traj.breakdown_level,
            "target_level": traj.target_level,
            "threshold_J0": threshold,
        }),
        passed: true,
        body: traj.to_csv(),
    })
}

fn parse_region(text: &str) -> Res<Vec<usize>> {
    let mut qs = vec![];
    for t in text.split('+') {
        match t.trim().parse() {
            Ok(q) => qs.push(q),
            Err(_) => return usage(format!("bad qubit '{t}' in --regions")),
        }
    }
    qs.sort_unstable();
    qs.dedup();
    Ok(qs)
}

fn region_operator(letter: char, qubits: &[usize]) -> Res<LocalOperator> {
    let local: Vec<(usize, char)> = (0..qubits.len()).map(|k| (k, letter.to_ascii_uppercase())).collect();
    let p = PauliOperator::from_letters(qubits.len(), &local, 0)?;
    let m = p.to_matrix(&(0..qubits.len()).collect::<Vec<_>>())?;
    Ok(LocalOperator::new(qubits.to_vec(), m)?)
}

fn parse_list(text: &str, what: &str) -> Res<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("bad value '{t}' in {what}"))))
        .collect()
}

fn run_lr(a: &LrArgs) -> Res<Outcome> {
    let chain = match &a.source.builtin {
        Some(b) => builtin_size(b, "chain:")?,
        None => None,
    };
    let (h, n, label) = match chain {
        Some(n) => {
            let h = mixed_field_chain(n, a.k, a.g, a.h)?.map(|v| C64::new(v, 0.0));
            (h, n, format!("chain:{n}"))
        }
        None => {
            let model = load_model(&a.source)?;
            let mut h = model.hamiltonian_dense(Normalization::Projector)?;
            if let Some(p) = &a.perturbation {
                let (_, dec) = load_perturbation(p, &model.lattice)?;
                h += dec.to_dense(&model.lattice.all_qubits())?;
            }
            (h, model.qubit_count(), model.label.clone())
        }
    };
    let Some((ra, rb)) = a.regions.split_once(',') else {
        return usage("--regions needs two regions 'A,B'");
    };
    let (qa, qb) = (parse_region(ra)?, parse_region(rb)?);
    if qa.iter().chain(&qb).any(|&q| q >= n) {
        return usage(format!("region qubits must be below {n}"));
    }
    let (oa, ob) = (region_operator(a.op_a, &qa)?, region_operator(a.op_b, &qb)?);
    let times = parse_list(&a.times, "--times")?;
    let mut body = String::from("t,norm\n");
    for &t in &times {
        body.push_str(&format!("{:e},{:e}\n", t, lr_commutator_norm(&h, &oa, &ob, t)?));
    }
    Ok(Outcome { file: "lieb_robinson.csv", summary: json!({ "hamiltonian": label, "A": qa, "B": qb }), passed: true, body })
}

fn run_continue(a: &ContinueArgs) -> Res<Outcome> {
    let model = load_model(&a.source)?;
    let (spec, dec) = load_perturbation(&a.perturbation, &model.lattice)?;
    let all = model.lattice.all_qubits();
    let h0 = model.hamiltonian_dense(Normalization::Projector)?;
    let path = ContinuationPath::new(h0.clone(), dec.to_dense(&all)?)?;
    let band = BandWindow::from_spectrum(&linalg::eigvalsh(&h0), a.band)?;
    let scheme = match a.scheme {
        SchemeArg::Midpoint => Integrator::Midpoint,
        SchemeArg::FirstOrder => Integrator::FirstOrder,
    };
    let res = continue_projector(&path, &band, a.steps, scheme)?;

    // dressed-operator checks: an anticommuting pair on qubit 0 and the band
    // expectations of the first generators before and after continuation
    let n = model.qubit_count();
    let x0 = PauliOperator::x_on(n, &[0]).to_matrix(&all)?;
    let z0 = PauliOperator::z_on(n, &[0]).to_matrix(&all)?;
    let anti = linalg::op_norm(&linalg::anticommutator(&dress_operator(&x0, &res.u)?, &dress_operator(&z0, &res.u)?));
    let (_, vecs0) = linalg::eigh(&h0);
    let (_, vecs1) = linalg::eigh(&path.at(1.0));
    let (p0, p1) = (band.projector(&vecs0), band.projector(&vecs1));
    let rank = band.count as f64;
    let expectations: Vec<Value> = model
        .generators()
        .iter()
        .take(4)
        .enumerate()
        .map(|(k, g)| -> Res<Value> {
            let gm = g.to_matrix(&all)?;
            let before = linalg::matmul(&p0, &gm).trace().re / rank;
            let after = linalg::matmul(&p1, &dress_operator(&gm, &res.u)?).trace().re / rank;
            Ok(json!({ "generator": k, "pauli": g.to_string(), "before": before, "after": after }))
        })
        .collect::<Res<_>>()?;
    let ranks: Vec<usize> = res.nodes.iter().map(|x| x.band_rank).collect();
    let out = json!({
        "model": model.label,
        "decay": decay_record(&spec, &dec)?,
        "band": band,
        "steps": a.steps,
        "scheme": scheme,
        "filter_mask": FILTER_MASK,
        "max_deviation": res.max_deviation,
        "unitarity": res.unitarity,
        "band_rank_min": ranks.iter().min(),
        "band_rank_max": ranks.iter().max(),
        "nodes": res.nodes,
        "dressed": { "anticommutator_x0_z0": anti, "expectations": expectations },
    });
    Ok(Outcome {
        file: "continue.json",
        summary: json!({ "max_deviation": res.max_deviation, "unitarity": res.unitarity, "anticommutator": anti }),
        passed: true,
        body: pretty(&out),
    })
}

fn run_gen(a: &GenArgs) -> Res<Outcome> {
    let lattice = match (&a.source.model, &a.source.builtin, a.l) {
        (None, None, Some(l)) => {
            let layout = match a.layout.as_str() {
                "edges" => Layout::Edges,
                "sites" => Layout::Sites,
                other => return usage(format!("unknown layout '{other}'")),
            };
            Lattice::new(l, l, layout)?
        }
        (None, None, None) => return usage("gen-perturbation needs --model, --builtin or --L"),
        _ => load_model(&a.source)?.lattice,
    };
    let spec = random_perturbation(&lattice, a.seed, a.q, a.j, a.mu)?;
    let dec = spec.to_decomposition()?;
    Ok(Outcome {
        file: "perturbation.json",
        summary: json!({ "terms": spec.entries.len(), "decay": decay_record(&spec, &dec)? }),
        passed: true,
        body: spec.to_json() + "\n",
    })
}

fn dispatch(cmd: &Command) -> Res<Outcome> {
    match cmd {
        Command::Check(a) => run_check(a),
        Command::Spectrum(a) => run_spectrum(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Flow(a) => run_flow(a),
        Command::ScalarFlow(a) => run_scalar(a),
        Command::LiebRobinson(a) => run_lr(a),
        Command::Continue(a) => run_continue(a),
        Command::GenPerturbation(a) => run_gen(a),
        Command::Replay(_) => usage("replay cannot be nested"),
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Res<()> {
    fs::write(dir.join(name), body).map_err(|e| Failure::Core(e.into()))
}

fn run(cli: Cli) -> Res<bool> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return usage("--jobs must be at least 1");
        }
        // fails only when a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let command = match cli.command {
        Command::Replay(r) => serde_json::from_str::<Command>(&read(&r.config)?)
            .map_err(|e| Failure::Usage(format!("bad config {}: {e}", r.config.display())))?,
        c => c,
    };
    let config = serde_json::to_string(&command).expect("serialisable config");
    let hash = format!("{:x}", Sha256::digest(config.as_bytes()));
    let start = Instant::now();
    let outcome = dispatch(&command)?;
    let elapsed = start.elapsed().as_secs_f64();
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::Core(e.into()))?;
            write_file(dir, outcome.file, &outcome.body)?;
            let config_value: Value = serde_json::from_str(&config).expect("round trip");
            write_file(dir, "config.json", &pretty(&config_value))?;
            let manifest = json!({
                "config_sha256": hash,
                "versions": { "tqo": env!("CARGO_PKG_VERSION"), "tqo-core": env!("CARGO_PKG_VERSION") },
                "threads": rayon::current_num_threads(),
                "dense_cap": linalg::dense_cap(),
                "timings": { "total_seconds": elapsed },
                "report": outcome.file,
                "passed": outcome.passed,
                "summary": outcome.summary,
            });
            write_file(dir, "manifest.json", &pretty(&manifest))?;
            eprintln!("wrote {} ({:.3} s)", dir.join(outcome.file).display(), elapsed);
        }
        None => print!("{}", outcome.body),
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
