use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use loomflow::coupling::{local_reassign, run_until_stationary, FixedNoise, StationaryConfig};
use loomflow::datasets::{default_polygon_offset, generate, polygon_counterexample, DatasetSpec};
use loomflow::field::LinearField;
use loomflow::flow::gaussian_oracle_scale;
use loomflow::metrics::{evaluate_model, LeaderboardRow, LEADERBOARD_HEADER};
use loomflow::model::{train_strategy, Mlp};
use loomflow::noise_store::NoiseStore;
use loomflow::ode::{integrate, nfe_of, write_trajectories_csv, SolverConfig};
use loomflow::ot::{brute_force_assignment, find_negative_cycles, matching_cost, solve_assignment, CostMatrix};
use loomflow::rng::{train_rng, SplitMix64};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{parse_solver, solver_label, ExperimentConfig, SampleSection};
use crate::svg::{render, thin, Panel, Series};
use crate::CliError;

pub const FAILED_MARKER: &str = "FAILED";

/// Independent random streams derived from a run seed.
struct Streams {
    init: u64,
    store: u64,
    train: u64,
    eval: u64,
    sample: u64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut g = SplitMix64::new(seed);
        Self { init: g.next_u64(), store: g.next_u64(), train: g.next_u64(), eval: g.next_u64(), sample: g.next_u64() }
    }
}

pub struct Run {
    pub seed: u64,
    pub dir: PathBuf,
}

/// One directory per seed; a single seed writes straight into `out`.
pub fn plan_runs(out: &Path, seeds: &[u64]) -> Vec<Run> {
    if seeds.len() == 1 {
        return vec![Run { seed: seeds[0], dir: out.to_path_buf() }];
    }
    seeds.iter().map(|&seed| Run { seed, dir: out.join(format!("seed-{seed}")) }).collect()
}

/// Runs `job` for every run on up to `jobs` threads; results keep run order.
pub fn run_all<F>(runs: &[Run], jobs: usize, job: F) -> Vec<Result<String, CliError>>
where
    F: Fn(&Run) -> Result<String, CliError> + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String, CliError>>>> = Mutex::new((0..runs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, runs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = runs.get(i) else { break };
                let r = prepare_dir(&run.dir).and_then(|_| job(run));
                if let Err(CliError::Runtime(msg)) = &r {
                    // Anything already written is partial; flag it.
                    let _ = fs::write(run.dir.join(FAILED_MARKER), format!("{msg}\n"));
                }
                results.lock().expect("no job panicked")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("no job panicked").into_iter().map(|r| r.expect("every run executed")).collect()
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn train(cfg: &ExperimentConfig, run: &Run) -> Result<String, CliError> {
    let streams = Streams::new(run.seed);
    let data = generate(&cfg.dataset_spec())?;
    let mut model = Mlp::new(cfg.mlp_config(), &mut train_rng(streams.init))?;
    let tcfg = cfg.train_config();
    let (log, coupler) = train_strategy(
        &mut model,
        cfg.strategy(),
        cfg.strategy.caches,
        streams.store,
        &data,
        &tcfg,
        &mut train_rng(streams.train),
    )?;
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    write_file(&run.dir.join("train_log.csv"), csv)?;
    model.save(&run.dir.join("model.ckpt"))?;
    if let Some(store) = coupler.store() {
        store.save(run.dir.join("store.bin"))?;
    }
    let resolved = toml::to_string(&ExperimentConfig { seeds: vec![run.seed], out: None, ..cfg.clone() })
        .map_err(|e| CliError::Runtime(format!("cannot serialise config: {e}")))?;
    write_file(&run.dir.join("config.toml"), resolved)?;
    Ok(format!("{} iterations, final loss {:.5}", log.records.len(), log.tail_loss(100)))
}

fn checkpoint_path(explicit: Option<&Path>, run: &Run) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| run.dir.join("model.ckpt"))
}

fn load_checkpoint(path: &Path) -> Result<Mlp, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Mlp::load(path)?)
}

pub fn eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, run: &Run) -> Result<String, CliError> {
    let path = checkpoint_path(checkpoint, run);
    let model = load_checkpoint(&path)?;
    if model.config() != &cfg.mlp_config() {
        return Err(CliError::Config(format!(
            "checkpoint {} does not match the [model] section of the config",
            path.display()
        )));
    }
    let spec: DatasetSpec = cfg.dataset_spec();
    let streams = Streams::new(run.seed);
    let mut csv = format!("{LEADERBOARD_HEADER}\n").into_bytes();
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for solver in cfg.eval_solvers()? {
        // The same noise and targets for every solver.
        let report = evaluate_model(&model, &spec, &cfg.eval_config(solver), &mut train_rng(streams.eval))?;
        let row = LeaderboardRow {
            strategy: cfg.strategy().name().to_string(),
            caches: cfg.strategy.caches,
            m: cfg.strategy.m,
            solver: solver_label(&solver).to_string(),
            nfe: report.nfe,
            w2: report.w2,
            mean_curvature: report.mean_curvature,
            induced_cost: report.induced_cost,
            seed: run.seed,
        };
        row.write(&mut csv)?;
        summary.push(format!("{} NFE {} W2 {:.4}", row.solver, row.nfe, row.w2));
        reports.push(serde_json::json!({ "solver": solver.to_string(), "report": report }));
    }
    write_file(&run.dir.join("leaderboard.csv"), csv)?;
    let json = serde_json::to_string_pretty(&reports).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&run.dir.join("eval.json"), json + "\n")?;
    Ok(summary.join(", "))
}

pub fn converge(cfg: &ExperimentConfig, run: &Run) -> Result<String, CliError> {
    let streams = Streams::new(run.seed);
    let data = generate(&cfg.dataset_spec())?;
    let mut store = NoiseStore::new(data.rows(), cfg.strategy.caches, data.cols(), streams.store)?;
    let report = run_until_stationary(&mut store, &data, cfg.strategy.m, &cfg.stationary_config(), &mut train_rng(streams.train))?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(&run.dir.join("convergence.csv"), csv)?;
    store.save(run.dir.join("store.bin"))?;

    let reassign = report.records.iter().map(|r| (r.iter as f64, r.reassignments as f64)).collect();
    let local = report.records.iter().map(|r| (r.iter as f64, r.local_ot_cost)).collect();
    let global: Vec<_> = report.records.iter().filter_map(|r| r.global_cost.map(|g| (r.iter as f64, g))).collect();
    let mut panels = vec![
        Panel {
            title: "Reassignments per minibatch".into(),
            x_label: "iteration".into(),
            series: vec![Series { label: String::new(), points: thin(moving_average(reassign, 50), 2000) }],
            equal_aspect: false,
        },
        Panel {
            title: "Minibatch OT cost".into(),
            x_label: "iteration".into(),
            series: vec![Series { label: String::new(), points: thin(moving_average(local, 50), 2000) }],
            equal_aspect: false,
        },
    ];
    if !global.is_empty() {
        panels.push(Panel {
            title: "Global matching cost".into(),
            x_label: "iteration".into(),
            series: vec![Series { label: String::new(), points: thin(global, 2000) }],
            equal_aspect: false,
        });
    }
    write_file(&run.dir.join("convergence.svg"), render(&panels))?;
    let summary = serde_json::json!({
        "iterations": report.iterations,
        "stationary": report.stationary,
        "initial_global_cost": report.initial_global_cost,
        "final_global_cost": report.final_global_cost,
    });
    write_file(&run.dir.join("convergence.json"), serde_json::to_string_pretty(&summary).expect("plain values") + "\n")?;
    Ok(format!(
        "{} iterations, {}, global cost {:.3} -> {:.3}",
        report.iterations,
        if report.stationary { "stationary" } else { "iteration cap reached" },
        report.initial_global_cost,
        report.final_global_cost
    ))
}

/// Trailing moving average over `window` points.
fn moving_average(points: Vec<(f64, f64)>, window: usize) -> Vec<(f64, f64)> {
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        sum += points[i].1;
        if i >= window {
            sum -= points[i - window].1;
        }
        out.push((points[i].0, sum / (i + 1).min(window) as f64));
    }
    out
}

pub struct SampleArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub samples: Option<usize>,
    pub solver: Option<&'a str>,
}

pub fn sample(section: &SampleSection, args: &SampleArgs, run: &Run) -> Result<String, CliError> {
    let n = args.samples.unwrap_or(section.n);
    if n == 0 {
        return Err(CliError::Config("--samples must be >= 1".into()));
    }
    let solver = parse_solver(args.solver.unwrap_or(&section.solver))?.recording();
    let model = load_checkpoint(&checkpoint_path(args.checkpoint, run))?;
    let dim = model.config().dim;
    let mut rng = train_rng(Streams::new(run.seed).sample);
    let mut trajectories = Vec::with_capacity(n);
    let mut z = vec![0.0; dim];
    for _ in 0..n {
        for v in &mut z {
            *v = rng.sample(StandardNormal);
        }
        trajectories.push(integrate(&model, &z, &solver)?);
    }
    let mut csv = Vec::new();
    write_trajectories_csv(&trajectories, &mut csv)?;
    write_file(&run.dir.join("trajectories.csv"), csv)?;
    if dim == 2 {
        let series = trajectories
            .iter()
            .map(|t| Series { label: String::new(), points: t.states.iter().map(|s| (s[0], s[1])).collect() })
            .collect();
        let panel = Panel { title: format!("Sampling trajectories ({solver})"), x_label: String::new(), series, equal_aspect: true };
        write_file(&run.dir.join("trajectories.svg"), render(&[panel]))?;
    }
    let nfe: usize = trajectories.iter().map(|t| t.nfe).sum();
    Ok(format!("{n} trajectories, {:.1} NFE each", nfe as f64 / n as f64))
}

/// Self-contained verification suite; every line is `name: PASS|FAIL detail`.
pub fn oracle(seed: u64) -> Vec<(String, bool, String)> {
    let mut out = Vec::new();
    let mut rng = train_rng(seed);

    let mut mismatches = 0;
    for n in 2..=8 {
        for _ in 0..10 {
            let entries: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let c = CostMatrix::new(n, n, entries).expect("finite");
            let fast = solve_assignment(&c).map(|r| r.1);
            let slow = brute_force_assignment(&c).map(|r| r.1);
            if fast.ok() != slow.ok() {
                mismatches += 1;
            }
        }
    }
    out.push(("hungarian vs brute force".into(), mismatches == 0, format!("70 matrices, {mismatches} mismatches")));

    let (n, m, instances) = (12, 4, 5);
    let patience = 10 * (0..m).fold(1, |acc, i| acc * (n - i) / (i + 1));
    let cfg = StationaryConfig { patience, max_iters: 10_000_000, global_cost_every: 0 };
    let mut dirty = 0;
    let mut failed = None;
    for i in 0..instances {
        let s = rng.random::<u64>();
        let audit = (|| -> loomflow::Result<bool> {
            let data = generate(&DatasetSpec::ring(n, 8, 4.0, 0.3, s))?;
            let mut store = NoiseStore::new(n, 1, 2, s ^ 0xA5A5)?;
            run_until_stationary(&mut store, &data, m, &cfg, &mut train_rng(s.wrapping_add(i)))?;
            let noise = store.noise_matrix(0)?;
            Ok(find_negative_cycles(store.assignment(0)?, &data, &noise, m)?.is_empty())
        })();
        match audit {
            Ok(true) => {}
            Ok(false) => dirty += 1,
            Err(e) => failed = Some(e.to_string()),
        }
    }
    out.push((
        "negative-cycle audit".into(),
        dirty == 0 && failed.is_none(),
        failed.unwrap_or_else(|| format!("{instances} stationary matchings (n={n}, m={m}), {dirty} with an improving cycle")),
    ));

    for points in [4usize, 5] {
        let result = (|| -> loomflow::Result<(bool, String)> {
            let inst = polygon_counterexample(points, default_polygon_offset(points))?;
            let mut moved = 0;
            for mask in 1u32..(1 << points) - 1 {
                let subset: Vec<usize> = (0..points).filter(|i| mask & (1 << i) != 0).collect();
                if subset.len() < 2 {
                    continue;
                }
                let mut pool = FixedNoise::new(inst.noise.clone(), inst.suboptimal.clone())?;
                if local_reassign(&mut pool, &inst.data, 0, &subset)?.reassigned != 0 {
                    moved += 1;
                }
            }
            let all: Vec<usize> = (0..points).collect();
            let mut pool = FixedNoise::new(inst.noise.clone(), inst.suboptimal.clone())?;
            local_reassign(&mut pool, &inst.data, 0, &all)?;
            let opt = matching_cost(&inst.optimal, &inst.data, &inst.noise)?;
            let sub = matching_cost(&inst.suboptimal, &inst.data, &inst.noise)?;
            let full = matching_cost(&pool.assignment, &inst.data, &inst.noise)?;
            Ok((moved == 0 && full <= opt + 1e-12 && sub > opt, format!("{moved} proper subsets move it; cost {sub:.4} vs optimum {opt:.4}")))
        })();
        let (pass, detail) = result.unwrap_or_else(|e| (false, e.to_string()));
        out.push((format!("polygon counter-example n={points}"), pass, detail));
    }

    let sigma = 0.1;
    let mut worst = gaussian_oracle_scale(0.5, sigma).abs();
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        worst = worst.max((gaussian_oracle_scale(t, sigma) + gaussian_oracle_scale(1.0 - t, sigma)).abs());
    }
    out.push(("gaussian oracle antisymmetry".into(), worst <= 1e-12, format!("max violation {worst:.1e}")));

    let field = LinearField { dim: 1, rate: 1.0 };
    let err = |cfg: SolverConfig| integrate(&field, &[1.0], &cfg).map(|t| (t.final_state()[0] - std::f64::consts::E).abs());
    let slope = |make: fn(usize) -> SolverConfig| -> loomflow::Result<f64> { Ok((err(make(10))? / err(make(40))?).log(4.0)) };
    let orders = (|| -> loomflow::Result<(bool, String)> {
        let (se, sm) = (slope(SolverConfig::euler)?, slope(SolverConfig::midpoint)?);
        let dopri = err(SolverConfig::dopri5(1e-6, 1e-6))?;
        let nfe_ok = nfe_of(&SolverConfig::midpoint(2))? == 4 && nfe_of(&SolverConfig::midpoint(6))? == 12;
        Ok((
            (se - 1.0).abs() <= 0.15 && (sm - 2.0).abs() <= 0.2 && dopri <= 1e-5 && nfe_ok,
            format!("euler order {se:.3}, midpoint order {sm:.3}, dopri5 error {dopri:.1e}"),
        ))
    })();
    let (pass, detail) = orders.unwrap_or_else(|e| (false, e.to_string()));
    out.push(("solver orders".into(), pass, detail));
    out
}
