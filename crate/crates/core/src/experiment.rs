//! Experiment configuration, the three learning paradigms (per-client
//! finetuning, centralized training on merged data, federated learning)
//! and the files each run leaves behind.
//!
//! # Config format
//!
//! One `key = value` per line, `#` starts a comment, keys are flat with
//! dotted namespaces and lists are comma-separated. Every key is optional;
//! see [`ExperimentConfig::to_kv`] for the full set with defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_population, merge, ClientDataset, PopulationSpec, Split};
use crate::engine::{
    dev_metrics, train_epochs, AlgorithmKind, AlgorithmSpec, FederatedRun, InProcess,
    Participation, RoundRecord, Server, WeightingMechanism,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_all, ClientScore, EvalReport};
use crate::models::{init_params, Activation, ModelKind, ModelSpec};
use crate::optim::{Optimizer, OptimizerKind, OptimizerSpec};
use crate::seeds;
use crate::tensor::ParamVector;
use crate::transport::run_server;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Finetune,
    Centralized,
    Federated,
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(Self::Finetune),
            "centralized" => Ok(Self::Centralized),
            "federated" => Ok(Self::Federated),
            _ => Err(Error::InvalidConfig(format!("unknown paradigm `{s}`"))),
        }
    }
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Finetune => "finetune",
            Self::Centralized => "centralized",
            Self::Federated => "federated",
        })
    }
}

/// Settings for the non-federated paradigms. They use the client
/// optimizer of the algorithm spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandaloneSpec {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Dev evaluation (and checkpoint selection) period in epochs.
    pub eval_every_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub paradigm: Paradigm,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Federated dev evaluation period, in rounds.
    pub eval_every: usize,
    pub model: ModelSpec,
    pub population: PopulationSpec,
    pub algo: AlgorithmSpec,
    pub standalone: StandaloneSpec,
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::InvalidConfig(format!("{key}: `{s}`: {e}")))
        })
        .collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Parse `key = value` lines. Duplicate keys are an error.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key", n + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::InvalidConfig(format!(
                "line {}: duplicate key `{k}`",
                n + 1
            )));
        }
    }
    Ok(map)
}

struct Keys(BTreeMap<String, String>);

impl Keys {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .remove(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::InvalidConfig(format!("{key}: `{v}`: {e}")))
            })
            .transpose()
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.0.remove(key).map(|v| list(key, &v)).transpose()
    }
}

impl ExperimentConfig {
    /// The configuration with every default: eight clients with skewed
    /// train sizes, Dirichlet label skew 0.3, an MLP and FedOPT with Lorar
    /// weighting.
    pub fn standard(seed: u64) -> Self {
        Self::from_map(BTreeMap::new(), seed).expect("defaults are valid")
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        Self::from_map(parse_kv(text)?, 0)
    }

    /// Build from parsed keys; `default_seed` is used when no `seed` key
    /// is present.
    pub fn from_map(map: BTreeMap<String, String>, default_seed: u64) -> Result<Self> {
        let mut k = Keys(map);
        let seed = k.take("seed")?.unwrap_or(default_seed);
        let paradigm = k.take("paradigm")?.unwrap_or(Paradigm::Federated);
        let output_dir = k
            .take::<String>("output_dir")?
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs/default"));
        let eval_every = k.take("eval_every")?.unwrap_or(5);

        let mut pop = PopulationSpec::standard(0.3, seed);
        if let Some(sizes) = k.take_list("data.sizes")? {
            pop.sizes = sizes;
        }
        pop.num_clients = pop.sizes.len();
        pop.label_skew_alpha = k
            .take("data.label_skew_alpha")?
            .unwrap_or(pop.label_skew_alpha);
        pop.num_classes = k.take("data.num_classes")?.unwrap_or(pop.num_classes);
        pop.input_dim = k.take("data.input_dim")?.unwrap_or(pop.input_dim);
        pop.class_separation = k
            .take("data.class_separation")?
            .unwrap_or(pop.class_separation);
        pop.mean_offset = k.take("data.mean_offset")?.unwrap_or(pop.mean_offset);
        pop.noise_std = k.take("data.noise_std")?.unwrap_or(pop.noise_std);
        pop.dev_fraction = k.take("data.dev_fraction")?.unwrap_or(pop.dev_fraction);
        pop.test_fraction = k.take("data.test_fraction")?.unwrap_or(pop.test_fraction);
        pop.seed = k.take("data.seed")?.unwrap_or(seed);
        let max_rotation: Option<f64> = k.take("data.max_rotation")?;
        pop.feature_rotation = match (k.take_list("data.rotation")?, max_rotation) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "set data.rotation or data.max_rotation, not both".into(),
                ))
            }
            (Some(r), None) => r,
            (None, m) => {
                let m = m.unwrap_or(std::f64::consts::FRAC_PI_2);
                let n = pop.num_clients;
                (0..n)
                    .map(|i| {
                        if n > 1 {
                            m * i as f64 / (n - 1) as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        };

        let kind: ModelKind = k.take("model.kind")?.unwrap_or(ModelKind::Mlp);
        let model = ModelSpec {
            kind,
            input_dim: pop.input_dim,
            hidden_dim: k
                .take("model.hidden_dim")?
                .unwrap_or(if kind == ModelKind::Mlp { 32 } else { 0 }),
            num_classes: if kind == ModelKind::LinearRegression {
                1
            } else {
                pop.num_classes
            },
            activation: k.take("model.activation")?.unwrap_or(Activation::Relu),
        };

        let algo_kind = k.take("algo.kind")?.unwrap_or(AlgorithmKind::FedOpt);
        let weighting = k
            .take("algo.weighting")?
            .unwrap_or(WeightingMechanism::Lorar);
        let mut algo = AlgorithmSpec::with_defaults(algo_kind, weighting, &pop.sizes);
        algo.rounds = k.take("algo.rounds")?.unwrap_or(algo.rounds);
        algo.mu = k.take("algo.mu")?.unwrap_or(algo.mu);
        if let Some(e) = k.take_list("algo.local_epochs")? {
            algo.local_epochs = e;
        }
        if let Some(b) = k.take_list("algo.batch_sizes")? {
            algo.batch_sizes = b;
        }
        algo.participation = match k.take::<String>("algo.participation")?.as_deref() {
            None | Some("full") => Participation::Full,
            Some(f) => Participation::Fraction(
                f.parse()
                    .map_err(|e| Error::InvalidConfig(format!("algo.participation: `{f}`: {e}")))?,
            ),
        };
        algo.client_opt = take_optimizer(&mut k, "client", algo.client_opt)?;
        algo.server_opt = take_optimizer(&mut k, "server", algo.server_opt)?;

        let standalone = StandaloneSpec {
            max_epochs: k.take("train.max_epochs")?.unwrap_or(40),
            batch_size: k.take("train.batch_size")?.unwrap_or(8),
            eval_every_epochs: k.take("train.eval_every_epochs")?.unwrap_or(1),
        };

        if let Some(unknown) = k.0.keys().next() {
            return Err(Error::InvalidConfig(format!("unknown key `{unknown}`")));
        }
        let cfg = Self {
            paradigm,
            seed,
            output_dir,
            eval_every,
            model,
            population: pop,
            algo,
            standalone,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: Error| match e {
            Error::InvalidSpec(m) => Error::InvalidConfig(m),
            other => other,
        };
        self.population.validate().map_err(invalid)?;
        self.model.validate().map_err(invalid)?;
        self.algo.validate(self.population.num_clients)?;
        if self.model.input_dim != self.population.input_dim {
            return Err(Error::InvalidConfig(
                "model and data input_dim differ".into(),
            ));
        }
        if self.model.is_classification() && self.model.num_classes != self.population.num_classes {
            return Err(Error::InvalidConfig(
                "model and data num_classes differ".into(),
            ));
        }
        if self.eval_every == 0 || self.standalone.eval_every_epochs == 0 {
            return Err(Error::InvalidConfig(
                "evaluation periods must be positive".into(),
            ));
        }
        if self.standalone.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "train.batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical key-value rendering; parsing it yields `self` again.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("paradigm", self.paradigm.to_string());
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("eval_every", self.eval_every.to_string());
        let p = &self.population;
        kv("data.sizes", join(&p.sizes));
        kv("data.label_skew_alpha", p.label_skew_alpha.to_string());
        kv("data.rotation", join(&p.feature_rotation));
        kv("data.num_classes", p.num_classes.to_string());
        kv("data.input_dim", p.input_dim.to_string());
        kv("data.class_separation", p.class_separation.to_string());
        kv("data.mean_offset", p.mean_offset.to_string());
        kv("data.noise_std", p.noise_std.to_string());
        kv("data.dev_fraction", p.dev_fraction.to_string());
        kv("data.test_fraction", p.test_fraction.to_string());
        kv("data.seed", p.seed.to_string());
        kv("model.kind", self.model.kind.to_string());
        kv("model.hidden_dim", self.model.hidden_dim.to_string());
        kv("model.activation", self.model.activation.to_string());
        let a = &self.algo;
        kv("algo.kind", a.kind.to_string());
        kv("algo.weighting", a.weighting.to_string());
        kv("algo.rounds", a.rounds.to_string());
        kv("algo.mu", a.mu.to_string());
        kv("algo.local_epochs", join(&a.local_epochs));
        kv("algo.batch_sizes", join(&a.batch_sizes));
        kv(
            "algo.participation",
            match a.participation {
                Participation::Full => "full".into(),
                Participation::Fraction(f) => f.to_string(),
            },
        );
        for (prefix, o) in [("client", &a.client_opt), ("server", &a.server_opt)] {
            kv(&format!("{prefix}.optimizer"), o.kind.to_string());
            kv(&format!("{prefix}.lr"), o.learning_rate.to_string());
            kv(&format!("{prefix}.momentum"), o.momentum.to_string());
            kv(&format!("{prefix}.beta2"), o.beta2.to_string());
            kv(&format!("{prefix}.epsilon"), o.epsilon.to_string());
        }
        kv("train.max_epochs", self.standalone.max_epochs.to_string());
        kv("train.batch_size", self.standalone.batch_size.to_string());
        kv(
            "train.eval_every_epochs",
            self.standalone.eval_every_epochs.to_string(),
        );
        s
    }

    /// Short run label such as `fedopt_lorar` or `centralized`.
    pub fn label(&self) -> String {
        match self.paradigm {
            Paradigm::Federated => format!("{}_{}", self.algo.kind, self.algo.weighting),
            other => other.to_string(),
        }
    }
}

fn take_optimizer(k: &mut Keys, prefix: &str, default: OptimizerSpec) -> Result<OptimizerSpec> {
    let kind: OptimizerKind = k
        .take(&format!("{prefix}.optimizer"))?
        .unwrap_or(default.kind);
    let mut o = OptimizerSpec { kind, ..default };
    o.learning_rate = k.take(&format!("{prefix}.lr"))?.unwrap_or(o.learning_rate);
    o.momentum = k.take(&format!("{prefix}.momentum"))?.unwrap_or(o.momentum);
    o.beta2 = k.take(&format!("{prefix}.beta2"))?.unwrap_or(o.beta2);
    o.epsilon = k.take(&format!("{prefix}.epsilon"))?.unwrap_or(o.epsilon);
    Ok(o)
}

/// Train `w` on `data.train` for up to `max_epochs`, keeping the
/// checkpoint with the best pooled accuracy over `dev`.
fn train_with_selection(
    cfg: &ExperimentConfig,
    init: &ParamVector,
    data: &ClientDataset,
    dev: &[&Split],
) -> Result<ParamVector> {
    let spec = &cfg.standalone;
    let mut opt = Optimizer::new(cfg.algo.client_opt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
        cfg.seed,
        seeds::STANDALONE,
        data.client_id as u64,
    ));
    let mut w = init.clone();
    let mut best = (dev_metrics(&cfg.model, &w, dev)?.micro_avg, w.clone());
    for epoch in 1..=spec.max_epochs {
        train_epochs(
            &cfg.model,
            &mut w,
            &data.train,
            &mut opt,
            1,
            spec.batch_size,
            None,
            &mut rng,
        )?;
        if epoch % spec.eval_every_epochs == 0 || epoch == spec.max_epochs {
            let score = dev_metrics(&cfg.model, &w, dev)?.micro_avg;
            if score > best.0 {
                best = (score, w.clone());
            }
        }
    }
    Ok(best.1)
}

fn initial_model(cfg: &ExperimentConfig) -> Result<ParamVector> {
    init_params(&cfg.model, seeds::derive(cfg.seed, seeds::INIT, 0))
}

fn require_classification(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.model.is_classification() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(
            "experiments evaluate accuracy and need a classification model".into(),
        ))
    }
}

/// The per-client finetuned models, in population order.
pub fn finetune_models(
    cfg: &ExperimentConfig,
    population: &[ClientDataset],
) -> Result<Vec<ParamVector>> {
    require_classification(cfg)?;
    if population.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let init = initial_model(cfg)?;
    population
        .par_iter()
        .map(|d| train_with_selection(cfg, &init, d, &[&d.dev]))
        .collect()
}

/// One model per client, each trained only on that client's data from the
/// shared initialisation and scored on that client's test split.
pub fn run_finetune(cfg: &ExperimentConfig, population: &[ClientDataset]) -> Result<EvalReport> {
    let models = finetune_models(cfg, population)?;
    let scores = population
        .iter()
        .zip(&models)
        .map(|(d, w)| {
            let correct = crate::models::correct_count(&cfg.model, w, &d.test)?;
            Ok(ClientScore::from_counts(d.client_id, d.test.len(), correct))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(scores)
}

/// One model trained on the merged training data, selected on the merged
/// dev data and scored on every client's test split.
pub fn run_centralized(cfg: &ExperimentConfig, population: &[ClientDataset]) -> Result<EvalReport> {
    require_classification(cfg)?;
    let merged = merge(population)?;
    let init = initial_model(cfg)?;
    let best = train_with_selection(cfg, &init, &merged, &[&merged.dev])?;
    evaluate_all(&cfg.model, &best, population)
}

pub enum Transport<'a> {
    InProcess,
    /// Clients connect to this listener (they are started by the caller).
    Tcp(&'a TcpListener),
}

pub struct FederatedOutcome {
    pub report: EvalReport,
    pub run: FederatedRun,
}

/// Run the federated paradigm and write `rounds.jsonl` (streamed as rounds
/// complete), `dev_curve.csv`, `loss_client_<id>.csv` and `report.json`
/// into `out`.
pub fn run_federated_experiment(
    cfg: &ExperimentConfig,
    population: &[ClientDataset],
    transport: Transport<'_>,
    out: &Path,
) -> Result<FederatedOutcome> {
    require_classification(cfg)?;
    fs::create_dir_all(out)?;
    let sizes: Vec<usize> = population.iter().map(ClientDataset::size).collect();
    let server = Server {
        model: cfg.model,
        algo: &cfg.algo,
        sizes: &sizes,
        dev_sets: population.iter().map(|d| &d.dev).collect(),
        seed: cfg.seed,
        eval_every: cfg.eval_every,
    };
    let mut log = BufWriter::new(fs::File::create(out.join("rounds.jsonl"))?);
    let on_record = |r: &RoundRecord| -> Result<()> {
        writeln!(log, "{}", r.to_json_line()?)?;
        log.flush()?;
        Ok(())
    };
    let run = match transport {
        Transport::InProcess => {
            let mut exec = InProcess {
                population,
                model: cfg.model,
                algo: &cfg.algo,
                seed: cfg.seed,
            };
            server.run(&mut exec, on_record)?
        }
        Transport::Tcp(listener) => run_server(listener, &server, on_record)?,
    };
    drop(log);
    emit_plot_data(&run.records, out)?;
    let report = evaluate_all(&cfg.model, &run.best_model, population)?;
    write_json(&out.join("report.json"), &report)?;
    Ok(FederatedOutcome { report, run })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_rounds(path: &Path) -> Result<Vec<RoundRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// `dev_curve.csv` (`round,micro_avg,macro_avg` for evaluated rounds,
/// 1-based) and one `loss_client_<id>.csv` (`step,loss`, one row per local
/// epoch) per client.
pub fn emit_plot_data(records: &[RoundRecord], out: &Path) -> Result<()> {
    let mut dev = String::from("round,micro_avg,macro_avg\n");
    let mut losses: BTreeMap<usize, String> = BTreeMap::new();
    for r in records {
        if let Some(m) = r.dev {
            writeln!(dev, "{},{},{}", r.round + 1, m.micro_avg, m.macro_avg).unwrap();
        }
        for c in &r.clients {
            let csv = losses
                .entry(c.client_id)
                .or_insert_with(|| String::from("step,loss\n"));
            let step = csv.lines().count() - 1;
            for (i, l) in c.epoch_losses.iter().enumerate() {
                writeln!(csv, "{},{l}", step + i).unwrap();
            }
        }
    }
    fs::write(out.join("dev_curve.csv"), dev)?;
    for (id, csv) in losses {
        fs::write(out.join(format!("loss_client_{id}.csv")), csv)?;
    }
    Ok(())
}

/// Parse a `dev_curve.csv` back into `(round, micro, macro)` rows.
pub fn read_dev_curve(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(n, line)| {
            let bad = |m: String| Error::DataFormat {
                line: n + 2,
                message: m,
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 columns, found {}", cols.len())));
            }
            Ok((
                cols[0].parse().map_err(|e| bad(format!("{e}")))?,
                cols[1].parse().map_err(|e| bad(format!("{e}")))?,
                cols[2].parse().map_err(|e| bad(format!("{e}")))?,
            ))
        })
        .collect()
}

/// Dev MicroAvg curves of several runs side by side: `round,<label>...`.
pub fn combined_dev_curves(runs: &[(String, Vec<RoundRecord>)]) -> String {
    let mut rounds: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for (i, (_, records)) in runs.iter().enumerate() {
        for r in records {
            if let Some(m) = r.dev {
                rounds
                    .entry(r.round + 1)
                    .or_insert_with(|| vec![None; runs.len()])[i] = Some(m.micro_avg);
            }
        }
    }
    let mut csv = String::from("round");
    for (label, _) in runs {
        write!(csv, ",{label}").unwrap();
    }
    csv.push('\n');
    for (round, vals) in rounds {
        write!(csv, "{round}").unwrap();
        for v in vals {
            match v {
                Some(v) => write!(csv, ",{v}").unwrap(),
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub label: String,
    pub paradigm: Paradigm,
    pub seed: u64,
    /// Canonical config text; feeding it back through `--config`
    /// reproduces the run.
    pub config: String,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            tool: "fedlorar".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            label: cfg.label(),
            paradigm: cfg.paradigm,
            seed: cfg.seed,
            config: cfg.to_kv(),
        }
    }
}

/// Generate the population described by `cfg`.
pub fn population(cfg: &ExperimentConfig) -> Result<Vec<ClientDataset>> {
    generate_population(&cfg.population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::DEFAULT_TRAIN_SIZES;

    #[test]
    fn defaults_follow_training_recipe() {
        let cfg = ExperimentConfig::standard(0);
        assert_eq!(cfg.population.sizes, DEFAULT_TRAIN_SIZES.to_vec());
        assert_eq!(cfg.algo.rounds, 60);
        assert_eq!(cfg.eval_every, 5);
        assert_eq!(cfg.algo.mu, 1e-4);
        assert_eq!(cfg.algo.server_opt.learning_rate, 1.0);
        assert_eq!(cfg.algo.server_opt.momentum, 0.9);
        assert_eq!(cfg.algo.local_epochs, vec![6, 6, 12, 12, 12, 12, 12, 12]);
        assert_eq!(cfg.algo.batch_sizes, vec![8, 8, 4, 4, 4, 4, 4, 4]);
    }

    #[test]
    fn kv_round_trip() {
        let text = "# demo\nseed = 9\nalgo.kind = fedprox  # trailing\nalgo.weighting = equal\ndata.sizes = 30, 20, 10\nalgo.participation = 0.5\n";
        let cfg = ExperimentConfig::from_kv(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.population.seed, 9);
        assert_eq!(cfg.algo.kind, AlgorithmKind::FedProx);
        assert_eq!(cfg.algo.local_epochs, vec![6, 6, 12]);
        assert_eq!(cfg.algo.participation, Participation::Fraction(0.5));
        let again = ExperimentConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_kv(), cfg.to_kv());
    }

    #[test]
    fn kv_errors() {
        for bad in [
            "nonsense",
            "seed = 1\nseed = 2",
            "algo.kind = fedsgd",
            "unknown.key = 1",
            "data.sizes = 10,0",
            "data.sizes = 10,20\nalgo.local_epochs = 1,2,3",
            "client.lr = -1",
            "model.kind = linear-regression\nparadigm = federated\nmodel.hidden_dim = 3",
            "data.rotation = 0\ndata.max_rotation = 1",
            "eval_every = 0",
        ] {
            assert!(
                matches!(ExperimentConfig::from_kv(bad), Err(Error::InvalidConfig(_))),
                "{bad}"
            );
        }
    }

    fn tiny(seed: u64) -> ExperimentConfig {
        let text = "data.sizes = 60,30\ndata.num_classes = 3\ndata.input_dim = 4\nmodel.hidden_dim = 6\nalgo.rounds = 4\neval_every = 2\ntrain.max_epochs = 4\n";
        let mut cfg = ExperimentConfig::from_kv(text).unwrap();
        cfg.seed = seed;
        cfg.population.seed = seed;
        cfg
    }

    #[test]
    fn single_client_centralized_equals_finetune() {
        let mut cfg = tiny(3);
        cfg.population.sizes = vec![50];
        cfg.population.num_clients = 1;
        cfg.population.feature_rotation = vec![0.0];
        cfg.algo.local_epochs = vec![3];
        cfg.algo.batch_sizes = vec![4];
        let pop = population(&cfg).unwrap();
        let f = run_finetune(&cfg, &pop).unwrap();
        let c = run_centralized(&cfg, &pop).unwrap();
        assert_eq!(f, c);
        assert_eq!(merge(&pop).unwrap().size(), pop[0].size());
    }

    #[test]
    fn finetune_is_deterministic() {
        let cfg = tiny(5);
        let pop = population(&cfg).unwrap();
        assert_eq!(
            run_finetune(&cfg, &pop).unwrap(),
            run_finetune(&cfg, &pop).unwrap()
        );
    }

    #[test]
    fn outputs_reparse_exactly() {
        let cfg = tiny(1);
        let pop = population(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome =
            run_federated_experiment(&cfg, &pop, Transport::InProcess, dir.path()).unwrap();
        let records = read_rounds(&dir.path().join("rounds.jsonl")).unwrap();
        assert_eq!(records, outcome.run.records);

        let curve = read_dev_curve(&dir.path().join("dev_curve.csv")).unwrap();
        let expected: Vec<(usize, f64, f64)> = outcome
            .run
            .records
            .iter()
            .filter_map(|r| r.dev.map(|m| (r.round + 1, m.micro_avg, m.macro_avg)))
            .collect();
        assert_eq!(curve, expected);

        let report: EvalReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report, outcome.report);

        let loss0 = fs::read_to_string(dir.path().join("loss_client_0.csv")).unwrap();
        let epochs0: usize = outcome
            .run
            .records
            .iter()
            .map(|r| r.clients[0].epoch_losses.len())
            .sum();
        assert_eq!(loss0.lines().count(), epochs0 + 1);
    }

    #[test]
    fn combined_curves_align_rounds() {
        let cfg = tiny(2);
        let pop = population(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = run_federated_experiment(&cfg, &pop, Transport::InProcess, dir.path()).unwrap();
        let csv = combined_dev_curves(&[
            ("a".into(), a.run.records.clone()),
            ("b".into(), a.run.records),
        ]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "round,a,b");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("2,"));
    }
}
