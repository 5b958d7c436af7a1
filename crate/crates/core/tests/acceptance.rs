//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::fs;
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use fedlorar::engine::local_objective_grad;
use fedlorar::experiment::ExperimentConfig;
use fedlorar::metrics::{ClientScore, EvalReport};
use fedlorar::transport::{decode, encode, Message};
use fedlorar::{
    compute_weights, evaluate_all, generate_population, init_params, loss, loss_and_grad,
    run_federated, Activation, AlgorithmKind, AlgorithmSpec, Batch, ClientDataset, ClientUpdate,
    Error, ModelKind, ModelSpec, OptimizerSpec, ParamVector, PopulationSpec, Split, Targets,
    WeightingMechanism,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- 1

fn metric_arithmetic() -> Outcome {
    let em = [79.76, 51.23, 77.42, 98.65, 66.51, 50.0, 34.62, 8.33];
    let test_sizes = [573usize, 447, 279, 74, 218, 38, 26, 24];
    let correct = [457usize, 229, 216, 73, 145, 19, 9, 2];
    for i in 0..8 {
        // the recovered counts must reproduce the reported per-client EM
        let pct = (10000.0 * correct[i] as f64 / test_sizes[i] as f64).round() / 100.0;
        ensure(
            (pct - em[i]).abs() < 1e-9,
            format!("client {i}: {pct} vs {}", em[i]),
        )?;
    }
    let scores = (0..8)
        .map(|i| ClientScore {
            client_id: i,
            test_size: test_sizes[i],
            correct: correct[i],
            accuracy: em[i] / 100.0,
        })
        .collect();
    let r = EvalReport::from_scores(scores).map_err(|e| e.to_string())?;
    let (macro_pct, micro_pct) = (100.0 * r.macro_avg, 100.0 * r.micro_avg);
    ensure(
        (macro_pct - 58.32).abs() <= 0.005,
        format!("MacroAvg {macro_pct}"),
    )?;
    ensure(
        (micro_pct - 68.49).abs() <= 0.005,
        format!("MicroAvg {micro_pct}"),
    )?;
    Ok(format!("MacroAvg {macro_pct:.4}, MicroAvg {micro_pct:.4}"))
}

// ---------------------------------------------------------------- 2

fn lorar_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(1..=12);
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(1..=5000)).collect();
        let dl: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random_range(0.0..3.0)
                }
            })
            .collect();
        if dl.iter().all(|&d| d == 0.0) {
            continue;
        }
        let updates: Vec<ClientUpdate> = (0..n)
            .map(|i| ClientUpdate {
                client_id: i,
                delta: ParamVector::new(vec![0.0]).unwrap(),
                weighted_loss_reduction: sizes[i] as f64 * dl[i],
                train_size: sizes[i],
                epoch_losses: vec![1.0, 1.0 - dl[i]],
            })
            .collect();
        let w = compute_weights(&updates, WeightingMechanism::Lorar).map_err(|e| e.to_string())?;
        ensure(!w.fallback, format!("case {case}: unexpected fallback"))?;
        // brute force, summing in reverse order
        let mut denom = 0.0;
        for i in (0..n).rev() {
            denom += sizes[i] as f64 * dl[i];
        }
        for i in 0..n {
            let expected = sizes[i] as f64 * dl[i] / denom;
            worst = worst.max((w.values[i] - expected).abs());
            ensure(w.values[i] >= 0.0, format!("case {case}: negative weight"))?;
        }
        ensure(worst <= 1e-12, format!("case {case}: deviation {worst:e}"))?;
        let sum: f64 = w.values.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-9, format!("case {case}: sum {sum}"))?;
    }
    Ok(format!("max deviation {worst:e}"))
}

// ---------------------------------------------------------------- 3

fn small_population(seed: u64) -> (ModelSpec, Vec<ClientDataset>) {
    let mut spec = PopulationSpec::standard(0.3, seed);
    spec.sizes = vec![120, 60, 30, 20];
    spec.num_clients = 4;
    spec.feature_rotation = vec![0.0, 0.3, 0.6, 0.9];
    spec.input_dim = 6;
    spec.num_classes = 4;
    (
        ModelSpec::mlp(6, 8, 4, Activation::Tanh),
        generate_population(&spec).unwrap(),
    )
}

fn small_algo(
    kind: AlgorithmKind,
    weighting: WeightingMechanism,
    sizes: &[usize],
    rounds: usize,
) -> AlgorithmSpec {
    let mut a = AlgorithmSpec::with_defaults(kind, weighting, sizes);
    a.rounds = rounds;
    a.local_epochs = vec![3];
    a.batch_sizes = vec![4];
    a
}

fn reduction_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let dl = rng.random_range(0.01..2.0);
        let ups: Vec<ClientUpdate> = (0..n)
            .map(|i| {
                let size = rng.random_range(1..=5000);
                ClientUpdate {
                    client_id: i,
                    delta: ParamVector::new(vec![0.0]).unwrap(),
                    weighted_loss_reduction: size as f64 * dl,
                    train_size: size,
                    epoch_losses: vec![dl, 0.0],
                }
            })
            .collect();
        let a = compute_weights(&ups, WeightingMechanism::Lorar)
            .unwrap()
            .values;
        let b = compute_weights(&ups, WeightingMechanism::Size)
            .unwrap()
            .values;
        ensure(
            a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12),
            "lorar != size under equal ΔL",
        )?;

        let size = rng.random_range(1..=5000);
        let ups: Vec<ClientUpdate> = (0..n)
            .map(|i| {
                let dl = rng.random_range(0.01..2.0);
                ClientUpdate {
                    client_id: i,
                    delta: ParamVector::new(vec![0.0]).unwrap(),
                    weighted_loss_reduction: size as f64 * dl,
                    train_size: size,
                    epoch_losses: vec![dl, 0.0],
                }
            })
            .collect();
        let a = compute_weights(&ups, WeightingMechanism::Lorar)
            .unwrap()
            .values;
        let b = compute_weights(&ups, WeightingMechanism::LossReductionOnly)
            .unwrap()
            .values;
        ensure(
            a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12),
            "lorar != lr-only under equal sizes",
        )?;
    }

    let (model, pop) = small_population(3);
    let sizes: Vec<usize> = pop.iter().map(ClientDataset::size).collect();
    for weighting in [WeightingMechanism::Size, WeightingMechanism::Lorar] {
        let avg = small_algo(AlgorithmKind::FedAvg, weighting, &sizes, 10);
        let base = run_federated(&avg, &model, &pop, 17, 1).map_err(|e| e.to_string())?;

        let mut prox = small_algo(AlgorithmKind::FedProx, weighting, &sizes, 10);
        prox.mu = 0.0;
        prox.server_opt = OptimizerSpec::sgd(1.0);
        let p = run_federated(&prox, &model, &pop, 17, 1).map_err(|e| e.to_string())?;
        ensure(
            p.records == base.records && p.final_model == base.final_model,
            "fedprox(μ=0) diverged from fedavg",
        )?;

        let mut opt = small_algo(AlgorithmKind::FedOpt, weighting, &sizes, 10);
        opt.server_opt = OptimizerSpec::sgd_momentum(1.0, 0.0);
        let o = run_federated(&opt, &model, &pop, 17, 1).map_err(|e| e.to_string())?;
        ensure(
            o.records == base.records && o.final_model == base.final_model,
            "fedopt(sgd, η=1, β=0) diverged from fedavg",
        )?;
    }
    Ok("size/lr-only reductions hold, trajectories bit-identical over 10 rounds".into())
}

// ---------------------------------------------------------------- 4

fn random_instance(rng: &mut ChaCha8Rng, i: usize) -> (ModelSpec, ParamVector, Batch) {
    let input_dim = rng.random_range(1..=6);
    let k = rng.random_range(2..=5);
    let spec = match i % 4 {
        0 => ModelSpec::linear_regression(input_dim),
        1 => ModelSpec::logistic_regression(input_dim, k),
        2 => ModelSpec::mlp(input_dim, rng.random_range(1..=6), k, Activation::Tanh),
        _ => ModelSpec::mlp(input_dim, rng.random_range(1..=6), k, Activation::Relu),
    };
    let w = ParamVector::new(
        (0..spec.param_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let rows = rng.random_range(1..=8);
    let inputs: Vec<f64> = (0..rows * input_dim)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let targets = if spec.kind == ModelKind::LinearRegression {
        Targets::Values((0..rows).map(|_| rng.random_range(-3.0..3.0)).collect())
    } else {
        Targets::Classes((0..rows).map(|_| rng.random_range(0..k)).collect())
    };
    (spec, w, Batch::new(inputs, input_dim, targets).unwrap())
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut kinds = [0usize; 3];
    for i in 0..100 {
        let (spec, w, batch) = random_instance(&mut rng, i);
        kinds[spec.kind as usize] += 1;
        let (_, g) = loss_and_grad(&spec, &w, &batch).map_err(|e| e.to_string())?;
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for j in 0..w.dim() {
            let mut plus = w.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let fp = loss(&spec, &ParamVector::new(plus).unwrap(), &batch).unwrap();
            let fm = loss(&spec, &ParamVector::new(minus).unwrap(), &batch).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            diff2 += (fd - g[j]).powi(2);
            norm2 += fd.powi(2).max(g[j].powi(2));
        }
        let rel = diff2.sqrt() / norm2.sqrt().max(1e-8);
        worst = worst.max(rel);
        ensure(
            rel < 1e-4,
            format!("instance {i} ({}): relative error {rel:e}", spec.kind),
        )?;

        let mu = rng.random_range(0.0..1.0);
        let (_, gp) = local_objective_grad(&spec, &w, &batch, mu, &w).map_err(|e| e.to_string())?;
        ensure(
            gp.max_abs_diff(&g).unwrap() <= 1e-12,
            format!("instance {i}: prox gradient at anchor differs"),
        )?;
    }
    ensure(
        kinds.iter().all(|&c| c > 0),
        "not every model kind exercised",
    )?;
    Ok(format!("max relative error {worst:e} over 100 instances"))
}

// ---------------------------------------------------------------- 5

fn lorar_directional() -> Outcome {
    const SEEDS: u64 = 5;
    let algos = [
        AlgorithmKind::FedAvg,
        AlgorithmKind::FedOpt,
        AlgorithmKind::FedProx,
    ];
    let mut jobs = Vec::new();
    for &a in &algos {
        for w in [WeightingMechanism::Size, WeightingMechanism::Lorar] {
            for seed in 0..SEEDS {
                jobs.push((a, w, seed));
            }
        }
    }
    let reports: Vec<EvalReport> = jobs
        .par_iter()
        .map(|&(kind, weighting, seed)| {
            let mut cfg = ExperimentConfig::standard(seed);
            cfg.algo = AlgorithmSpec {
                kind,
                weighting,
                ..cfg.algo.clone()
            };
            let pop = generate_population(&cfg.population)?;
            let run = run_federated(&cfg.algo, &cfg.model, &pop, seed, cfg.eval_every)?;
            evaluate_all(&cfg.model, &run.best_model, &pop)
        })
        .collect::<Result<_, Error>>()
        .map_err(|e| e.to_string())?;
    let get = |a: usize, w: usize| {
        &reports[(a * 2 + w) * SEEDS as usize..(a * 2 + w + 1) * SEEDS as usize]
    };

    let cfg = ExperimentConfig::standard(0);
    ensure(
        cfg.population.label_skew_alpha == 0.3 && cfg.algo.rounds == 60,
        "defaults changed",
    )?;
    ensure(
        cfg.model.kind == ModelKind::Mlp && cfg.population.num_clients == 8,
        "defaults changed",
    )?;

    let mut wins = 0;
    let mut summary = Vec::new();
    for (ai, a) in algos.iter().enumerate() {
        let base = median(get(ai, 0).iter().map(|r| r.macro_avg).collect());
        let lorar = median(get(ai, 1).iter().map(|r| r.macro_avg).collect());
        if lorar > base {
            wins += 1;
        }
        summary.push(format!("{a} {:.2}->{:.2}", 100.0 * base, 100.0 * lorar));
    }

    // per-client median gain over seeds, fedavg
    let sizes = &cfg.population.sizes;
    let gains: Vec<f64> = (0..8)
        .map(|c| {
            median(
                (0..SEEDS as usize)
                    .map(|s| {
                        get(0, 1)[s].per_client[c].accuracy - get(0, 0)[s].per_client[c].accuracy
                    })
                    .collect(),
            )
        })
        .collect();
    let mut by_size: Vec<usize> = (0..8).collect();
    by_size.sort_by_key(|&c| (sizes[c], c));
    let small = median(by_size[..3].iter().map(|&c| gains[c]).collect());
    let large = median(by_size[6..].iter().map(|&c| gains[c]).collect());
    let detail = format!(
        "MacroAvg medians [{}]; fedavg gain small {:.2} vs large {:.2}",
        summary.join(", "),
        100.0 * small,
        100.0 * large
    );
    ensure(
        wins >= 2,
        format!("lorar won on {wins}/3 algorithms: {detail}"),
    )?;
    ensure(
        small > large,
        format!("small-client gain not larger: {detail}"),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- 6

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fedlorar")
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("{cmd:?} failed: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

fn transport_equivalence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let common = [
        "--algo",
        "fedopt",
        "--weighting",
        "lorar",
        "--rounds",
        "10",
        "--seed",
        "6",
    ];
    let inproc = dir.path().join("inproc");
    run_ok(
        Command::new(bin())
            .arg("federated")
            .args(common)
            .arg("--out")
            .arg(&inproc),
    )?;

    let tcp = dir.path().join("tcp");
    let mut server = Command::new(bin())
        .arg("serve")
        .args(common)
        .arg("--out")
        .arg(&tcp)
        .args(["--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut stdout = BufReader::new(server.stdout.take().unwrap());
    let mut line = String::new();
    stdout.read_line(&mut line).map_err(|e| e.to_string())?;
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected server output `{line}`"))?
        .to_string();
    let clients: Vec<_> = (0..8)
        .map(|i| {
            Command::new(bin())
                .arg("client")
                .args(common)
                .args(["--server", &addr, "--client-id", &i.to_string()])
                .spawn()
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    for mut c in clients {
        ensure(
            c.wait().map_err(|e| e.to_string())?.success(),
            "client process failed",
        )?;
    }
    let mut table = String::new();
    std::io::Read::read_to_string(&mut stdout, &mut table).map_err(|e| e.to_string())?;
    ensure(
        server.wait().map_err(|e| e.to_string())?.success(),
        "server process failed",
    )?;

    let a = fs::read(inproc.join("rounds.jsonl")).map_err(|e| e.to_string())?;
    let b = fs::read(tcp.join("rounds.jsonl")).map_err(|e| e.to_string())?;
    ensure(a.lines_count() == 10, "expected 10 round records")?;
    ensure(
        a == b,
        "rounds.jsonl differs between in-process and TCP runs",
    )?;
    Ok(format!("10 rounds, {} bytes identical", a.len()))
}

trait LinesCount {
    fn lines_count(&self) -> usize;
}

impl LinesCount for Vec<u8> {
    fn lines_count(&self) -> usize {
        self.iter().filter(|&&b| b == b'\n').count()
    }
}

// ---------------------------------------------------------------- 7

fn dir_contents(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.map_err(|e| e.to_string())?;
            Ok((
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).map_err(|e| e.to_string())?,
            ))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism_and_degeneracy() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let args = [
        "--algo",
        "fedprox",
        "--weighting",
        "lorar",
        "--rounds",
        "5",
        "--eval-every",
        "2",
        "--seed",
        "7",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    // identical output_dir values so the manifests can match byte for byte
    for out in [&a, &b] {
        run_ok(
            Command::new(bin())
                .current_dir(out.parent().unwrap())
                .arg("federated")
                .args(args)
                .arg("--out")
                .arg("run")
                .env("FEDLORAR_LOG", "off"),
        )?;
        fs::rename(out.parent().unwrap().join("run"), out).map_err(|e| e.to_string())?;
    }
    let (fa, fb) = (dir_contents(&a)?, dir_contents(&b)?);
    ensure(fa.len() >= 5, format!("only {} output files", fa.len()))?;
    ensure(fa == fb, "outputs differ between identical runs")?;

    // all-plateau round: zero inputs with balanced labels give a zero
    // gradient for any weights when biases are zero, so ΔL = 0 everywhere
    let zero_client = |id: usize, rows: usize| {
        let labels: Vec<usize> = (0..rows).map(|r| r % 2).collect();
        let split = Split::new(3, vec![0.0; rows * 3], labels).unwrap();
        ClientDataset {
            client_id: id,
            num_classes: 2,
            train: split.clone(),
            dev: split.clone(),
            test: split,
        }
    };
    let pop = vec![zero_client(0, 40), zero_client(1, 10)];
    let model = ModelSpec::mlp(3, 4, 2, Activation::Relu);
    ensure(init_params(&model, 1).is_ok(), "init failed")?;
    let mut algo =
        AlgorithmSpec::with_defaults(AlgorithmKind::FedAvg, WeightingMechanism::Lorar, &[40, 10]);
    algo.rounds = 3;
    // full batches keep every batch label-balanced
    algo.batch_sizes = vec![40, 10];
    let run = run_federated(&algo, &model, &pop, 1, 1).map_err(|e| e.to_string())?;
    for r in &run.records {
        ensure(
            r.weighting_fallback,
            format!("round {} not flagged", r.round),
        )?;
        ensure(
            r.weights() == vec![0.8, 0.2],
            format!("round {} weights {:?}", r.round, r.weights()),
        )?;
    }
    Ok(format!(
        "{} files byte-identical; plateau rounds flagged with size weights",
        fa.len()
    ))
}

// ---------------------------------------------------------------- 8

fn wire_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let seeds: Vec<Vec<u8>> = [
        Message::Hello {
            client_id: 3,
            train_size: 228,
        },
        Message::GlobalModel {
            round: 4,
            weights: ParamVector::new(vec![0.5, -1.5, 2.0]).unwrap(),
        },
        Message::Update {
            round: 9,
            update: ClientUpdate {
                client_id: 1,
                delta: ParamVector::new(vec![0.25; 5]).unwrap(),
                weighted_loss_reduction: 3.5,
                train_size: 4347,
                epoch_losses: vec![1.0, 0.5, 0.25],
            },
        },
        Message::Shutdown,
    ]
    .iter()
    .map(|m| encode(m).unwrap())
    .collect();

    let (mut ok, mut errors) = (0usize, 0usize);
    for i in 0..10_000 {
        let bytes: Vec<u8> = match i % 4 {
            0 => (0..rng.random_range(0..64)).map(|_| rng.random()).collect(),
            1 => {
                let mut b = seeds[rng.random_range(0..seeds.len())].clone();
                for _ in 0..rng.random_range(1..4) {
                    let p = rng.random_range(0..b.len());
                    b[p] = rng.random();
                }
                b
            }
            2 => {
                let b = &seeds[rng.random_range(0..seeds.len())];
                b[..rng.random_range(0..b.len())].to_vec()
            }
            _ => {
                let mut b = seeds[rng.random_range(0..seeds.len())].clone();
                let extra = rng.random_range(1..16);
                b.extend((0..extra).map(|_| rng.random::<u8>()));
                b
            }
        };
        match panic::catch_unwind(AssertUnwindSafe(|| decode(&bytes))) {
            Ok(Ok(_)) => ok += 1,
            Ok(Err(
                Error::MalformedFrame(_)
                | Error::TruncatedFrame { .. }
                | Error::VersionMismatch { .. }
                | Error::PayloadTooLarge(_),
            )) => errors += 1,
            Ok(Err(other)) => return Err(format!("input {i}: unexpected error kind {other:?}")),
            Err(_) => return Err(format!("input {i}: decode panicked on {bytes:?}")),
        }
    }
    Ok(format!("{ok} decoded, {errors} typed errors, no panics"))
}

// ----------------------------------------------------------------

fn main() {
    // keep expected panics (if any) from cluttering the report
    panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 8] = [
        (
            "metric arithmetic",
            metric_arithmetic,
            Some(Duration::from_secs(1)),
        ),
        (
            "lorar weight oracle",
            lorar_oracle,
            Some(Duration::from_secs(1)),
        ),
        (
            "reduction identities",
            reduction_identities,
            Some(Duration::from_secs(30)),
        ),
        (
            "gradient correctness",
            gradient_check,
            Some(Duration::from_secs(30)),
        ),
        ("lorar directional gain", lorar_directional, None),
        (
            "transport equivalence",
            transport_equivalence,
            Some(Duration::from_secs(120)),
        ),
        (
            "determinism and degeneracy",
            determinism_and_degeneracy,
            Some(Duration::from_secs(30)),
        ),
        ("wire robustness", wire_fuzz, Some(Duration::from_secs(10))),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|p| id.contains(p.as_str()) || name.contains(p.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > *l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {id} ({name}) [{elapsed:.2?}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} ({name}) [{elapsed:.2?}]: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
