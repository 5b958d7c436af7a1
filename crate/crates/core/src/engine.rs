//! The communication-round protocol.
//!
//! Each round the server broadcasts `w^t`, every participating client runs
//! local training from it and returns `Δw_i = w^t - w_i` together with
//! `|D_i|·ΔL_i` (its train size times the spread of its per-epoch training
//! losses). The server turns those into aggregation weights, forms
//! `Δw = Σ p_i Δw_i` in ascending client order and hands `Δw` to the
//! server optimizer as a pseudo-gradient.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{ClientDataset, Split};
use crate::error::{Error, Result};
use crate::models::{self, correct_count, BatchView, ModelSpec, TargetsRef};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::seeds;
use crate::tensor::{l2_norm_sq, weighted_sum, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    FedAvg,
    FedOpt,
    FedProx,
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Self::FedAvg),
            "fedopt" => Ok(Self::FedOpt),
            "fedprox" => Ok(Self::FedProx),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm `{s}`"))),
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FedAvg => "fedavg",
            Self::FedOpt => "fedopt",
            Self::FedProx => "fedprox",
        })
    }
}

/// How per-client aggregation weights are formed each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingMechanism {
    /// `|D_i| / Σ|D_j|`
    Size,
    /// `1 / N`
    Equal,
    /// `ΔL_i / Σ ΔL_j`
    LossReductionOnly,
    /// `|D_i|ΔL_i / Σ |D_j|ΔL_j`
    Lorar,
}

impl FromStr for WeightingMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "size" => Ok(Self::Size),
            "equal" => Ok(Self::Equal),
            "lr" | "loss-reduction-only" => Ok(Self::LossReductionOnly),
            "lorar" => Ok(Self::Lorar),
            _ => Err(Error::InvalidConfig(format!("unknown weighting `{s}`"))),
        }
    }
}

impl fmt::Display for WeightingMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Size => "size",
            Self::Equal => "equal",
            Self::LossReductionOnly => "lr",
            Self::Lorar => "lorar",
        })
    }
}

/// Which clients take part in a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Participation {
    Full,
    /// A seeded random subset of `max(1, round(fraction·N))` clients.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub kind: AlgorithmKind,
    /// Proximal coefficient; only used by FedProx.
    pub mu: f64,
    pub client_opt: OptimizerSpec,
    /// Ignored for FedAvg, which always uses SGD with unit rate.
    pub server_opt: OptimizerSpec,
    /// Local epochs per client; a single entry applies to every client.
    pub local_epochs: Vec<usize>,
    /// Mini-batch size per client; a single entry applies to every client.
    pub batch_sizes: Vec<usize>,
    pub rounds: usize,
    pub weighting: WeightingMechanism,
    pub participation: Participation,
}

impl AlgorithmSpec {
    /// Defaults for a population with the given train sizes: server rate 1
    /// with momentum 0.9 (FedOPT), `μ = 1e-4` (FedProx), 60 rounds, 6
    /// local epochs and batch size 8 for the two largest clients, 12 epochs
    /// and batch size 4 for the rest.
    pub fn with_defaults(
        kind: AlgorithmKind,
        weighting: WeightingMechanism,
        sizes: &[usize],
    ) -> Self {
        let mut by_size: Vec<usize> = (0..sizes.len()).collect();
        by_size.sort_by_key(|&i| (std::cmp::Reverse(sizes[i]), i));
        let large: Vec<usize> = by_size.into_iter().take(2).collect();
        let pick = |big: usize, small: usize| -> Vec<usize> {
            (0..sizes.len())
                .map(|i| if large.contains(&i) { big } else { small })
                .collect()
        };
        Self {
            kind,
            mu: 1e-4,
            client_opt: OptimizerSpec::sgd(0.05),
            server_opt: OptimizerSpec::sgd_momentum(1.0, 0.9),
            local_epochs: pick(6, 12),
            batch_sizes: pick(8, 4),
            rounds: 60,
            weighting,
            participation: Participation::Full,
        }
    }

    pub fn validate(&self, num_clients: usize) -> Result<()> {
        self.client_opt.validate()?;
        self.server_optimizer().validate()?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig("mu must be nonnegative".into()));
        }
        for (name, v) in [
            ("local_epochs", &self.local_epochs),
            ("batch_sizes", &self.batch_sizes),
        ] {
            if v.is_empty() || v.contains(&0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} entries must be positive"
                )));
            }
            if v.len() != 1 && v.len() != num_clients {
                return Err(Error::InvalidConfig(format!(
                    "{name} has {} entries for {num_clients} clients",
                    v.len()
                )));
            }
        }
        if let Participation::Fraction(f) = self.participation {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(
                    "participation fraction must be in (0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn server_optimizer(&self) -> OptimizerSpec {
        match self.kind {
            AlgorithmKind::FedAvg => OptimizerSpec::sgd(1.0),
            _ => self.server_opt,
        }
    }

    /// Proximal coefficient actually applied during local training.
    pub fn effective_mu(&self) -> f64 {
        match self.kind {
            AlgorithmKind::FedProx => self.mu,
            _ => 0.0,
        }
    }

    fn per_client(v: &[usize], client_id: usize) -> Result<usize> {
        match v {
            [one] => Ok(*one),
            _ => v.get(client_id).copied().ok_or_else(|| {
                Error::InvalidConfig(format!("no per-client setting for client {client_id}"))
            }),
        }
    }

    pub fn epochs_for(&self, client_id: usize) -> Result<usize> {
        Self::per_client(&self.local_epochs, client_id)
    }

    pub fn batch_size_for(&self, client_id: usize) -> Result<usize> {
        Self::per_client(&self.batch_sizes, client_id)
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// `w^t - w_i` after local training.
    pub delta: ParamVector,
    /// `|D_i|·ΔL_i`.
    pub weighted_loss_reduction: f64,
    pub train_size: usize,
    /// Mean mini-batch training loss of each local epoch.
    pub epoch_losses: Vec<f64>,
}

impl ClientUpdate {
    /// `ΔL_i`, recovered from the transmitted product.
    pub fn loss_reduction(&self) -> f64 {
        self.weighted_loss_reduction / self.train_size as f64
    }
}

/// Seed of client `client_id`'s local-training stream in `round`.
pub fn round_seed(seed: u64, round: usize, client_id: usize) -> u64 {
    seeds::derive2(seed, seeds::LOCAL_TRAINING, round as u64, client_id as u64)
}

/// Reusable mini-batch buffers.
struct BatchBuffers {
    inputs: Vec<f64>,
    classes: Vec<usize>,
    values: Vec<f64>,
}

impl BatchBuffers {
    fn new() -> Self {
        Self {
            inputs: Vec::new(),
            classes: Vec::new(),
            values: Vec::new(),
        }
    }

    fn gather<'a>(&'a mut self, split: &Split, rows: &[usize], regression: bool) -> BatchView<'a> {
        self.inputs.clear();
        self.classes.clear();
        self.values.clear();
        for &r in rows {
            self.inputs.extend_from_slice(split.row(r));
            let label = split.labels()[r];
            if regression {
                self.values.push(label as f64);
            } else {
                self.classes.push(label);
            }
        }
        BatchView {
            inputs: &self.inputs,
            targets: if regression {
                TargetsRef::Values(&self.values)
            } else {
                TargetsRef::Classes(&self.classes)
            },
        }
    }
}

/// Mini-batch training of `w` on `split` for `epochs` epochs, shuffling
/// with `rng` at the start of each epoch. With `prox = Some((μ, anchor))`
/// the objective gains `μ/2·‖w - anchor‖²`. Returns the mean batch loss of
/// every epoch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_epochs(
    spec: &ModelSpec,
    w: &mut ParamVector,
    split: &Split,
    opt: &mut Optimizer,
    epochs: usize,
    batch_size: usize,
    prox: Option<(f64, &ParamVector)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    check_training_inputs(spec, w, split)?;
    if let Some((_, anchor)) = prox {
        if anchor.dim() != w.dim() {
            return Err(Error::DimensionMismatch {
                expected: w.dim(),
                actual: anchor.dim(),
            });
        }
    }
    let regression = !spec.is_classification();
    let mut order: Vec<usize> = (0..split.len()).collect();
    let mut buffers = BatchBuffers::new();
    let mut grad = vec![0.0; w.dim()];
    let mut losses = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let view = buffers.gather(split, rows, regression);
            let mut value = models::evaluate(spec, w.as_slice(), view, Some(&mut grad));
            if let Some((mu, anchor)) = prox {
                let mut dist = 0.0;
                for ((g, wi), ai) in grad.iter_mut().zip(w.as_slice()).zip(anchor.as_slice()) {
                    let diff = wi - ai;
                    dist += diff * diff;
                    *g += mu * diff;
                }
                value += 0.5 * mu * dist;
            }
            opt.step_raw(w.values_mut(), &grad)?;
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteResult("local training loss"));
        }
        w.ensure_finite("local training")?;
        losses.push(mean);
    }
    Ok(losses)
}

fn check_training_inputs(spec: &ModelSpec, w: &ParamVector, split: &Split) -> Result<()> {
    spec.validate()?;
    if w.dim() != spec.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_dim(),
            actual: w.dim(),
        });
    }
    if split.input_dim() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: split.input_dim(),
        });
    }
    if spec.is_classification() && split.labels().iter().any(|&l| l >= spec.num_classes) {
        return Err(Error::InvalidSpec("label out of range for model".into()));
    }
    Ok(())
}

/// Gradient of the local objective at `w`: the plain loss gradient plus
/// `μ·(w - anchor)` for FedProx.
pub fn local_objective_grad(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &models::Batch,
    mu: f64,
    anchor: &ParamVector,
) -> Result<(f64, ParamVector)> {
    let (loss, grad) = models::loss_and_grad(spec, w, batch)?;
    if mu == 0.0 {
        return Ok((loss, grad));
    }
    let diff = w.sub(anchor)?;
    let total = loss + 0.5 * mu * l2_norm_sq(&diff)?;
    Ok((total, crate::tensor::axpy(mu, &diff, &grad)?))
}

/// Run one client's local training from `global_w`.
pub fn local_training(
    dataset: &ClientDataset,
    global_w: &ParamVector,
    model: &ModelSpec,
    algo: &AlgorithmSpec,
    round_seed: u64,
) -> Result<ClientUpdate> {
    let client_id = dataset.client_id;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset(client_id));
    }
    let epochs = algo.epochs_for(client_id)?;
    let batch_size = algo.batch_size_for(client_id)?;
    let mut opt = Optimizer::new(algo.client_opt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    let mut w = global_w.clone();
    let mu = algo.effective_mu();
    let prox = (mu > 0.0).then_some((mu, global_w));
    let epoch_losses = train_epochs(
        model,
        &mut w,
        &dataset.train,
        &mut opt,
        epochs,
        batch_size,
        prox,
        &mut rng,
    )?;

    let max = epoch_losses
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let min = epoch_losses.iter().copied().fold(f64::INFINITY, f64::min);
    let size = dataset.size();
    Ok(ClientUpdate {
        client_id,
        delta: global_w.sub(&w)?,
        weighted_loss_reduction: size as f64 * (max - min),
        train_size: size,
        epoch_losses,
    })
}

/// Aggregation weights, aligned with the updates they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
    /// The mechanism's denominator was zero and size weights were used.
    pub fallback: bool,
}

fn normalise(raw: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    (total > 0.0 && total.is_finite()).then(|| raw.iter().map(|r| r / total).collect())
}

pub fn compute_weights(updates: &[ClientUpdate], mechanism: WeightingMechanism) -> Result<Weights> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("compute_weights"));
    }
    if let Some(bad) = updates.iter().find(|u| {
        u.train_size == 0
            || u.weighted_loss_reduction < 0.0
            || !u.weighted_loss_reduction.is_finite()
    }) {
        return Err(Error::Protocol(format!(
            "client {} reported size {} and loss reduction {}",
            bad.client_id, bad.train_size, bad.weighted_loss_reduction
        )));
    }
    let sizes: Vec<f64> = updates.iter().map(|u| u.train_size as f64).collect();
    let by_size = || normalise(&sizes).expect("sizes are positive");
    let weighted = |raw: Vec<f64>| match normalise(&raw) {
        Some(values) => Weights {
            values,
            fallback: false,
        },
        None => Weights {
            values: by_size(),
            fallback: true,
        },
    };
    Ok(match mechanism {
        WeightingMechanism::Size => Weights {
            values: by_size(),
            fallback: false,
        },
        WeightingMechanism::Equal => Weights {
            values: vec![1.0 / updates.len() as f64; updates.len()],
            fallback: false,
        },
        WeightingMechanism::LossReductionOnly => {
            weighted(updates.iter().map(ClientUpdate::loss_reduction).collect())
        }
        WeightingMechanism::Lorar => {
            weighted(updates.iter().map(|u| u.weighted_loss_reduction).collect())
        }
    })
}

/// `Δw = Σ p_i Δw_i` in ascending client order, then one server step.
/// Returns the new global model and `Δw`.
pub fn aggregate_and_update(
    server: &mut Optimizer,
    global_w: &ParamVector,
    updates: &[ClientUpdate],
    weights: &[f64],
) -> Result<(ParamVector, ParamVector)> {
    if updates.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: updates.len(),
            actual: weights.len(),
        });
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    let ws: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let deltas: Vec<&ParamVector> = order.iter().map(|&i| &updates[i].delta).collect();
    let aggregate = weighted_sum(&ws, &deltas)?;
    if aggregate.dim() != global_w.dim() {
        return Err(Error::DimensionMismatch {
            expected: global_w.dim(),
            actual: aggregate.dim(),
        });
    }
    let mut next = global_w.clone();
    server.step(&mut next, &aggregate)?;
    Ok((next, aggregate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundLog {
    pub client_id: usize,
    pub train_size: usize,
    pub weight: f64,
    pub weighted_loss_reduction: f64,
    pub epoch_losses: Vec<f64>,
}

/// Accuracy of the global model on the clients' dev splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub micro_avg: f64,
    pub macro_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRoundLog>,
    pub weighting_fallback: bool,
    /// `‖Δw‖`
    pub aggregate_norm: f64,
    pub dev: Option<DevMetrics>,
}

impl RoundRecord {
    pub fn weights(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Collects the updates of one round from wherever the clients live.
pub trait RoundExecutor {
    /// Run local training on `participants` (ascending ids) from `global`.
    fn collect(
        &mut self,
        round: usize,
        global: &ParamVector,
        participants: &[usize],
    ) -> Result<Vec<ClientUpdate>>;
}

/// Clients trained in this process, in parallel across clients.
pub struct InProcess<'a> {
    pub population: &'a [ClientDataset],
    pub model: ModelSpec,
    pub algo: &'a AlgorithmSpec,
    pub seed: u64,
}

impl RoundExecutor for InProcess<'_> {
    fn collect(
        &mut self,
        round: usize,
        global: &ParamVector,
        participants: &[usize],
    ) -> Result<Vec<ClientUpdate>> {
        participants
            .par_iter()
            .map(|&id| {
                let dataset = self
                    .population
                    .iter()
                    .find(|d| d.client_id == id)
                    .ok_or_else(|| Error::Protocol(format!("unknown client {id}")))?;
                local_training(
                    dataset,
                    global,
                    &self.model,
                    self.algo,
                    round_seed(self.seed, round, id),
                )
            })
            .collect()
    }
}

/// Clients taking part in `round`, ascending.
pub fn sample_clients(
    participation: Participation,
    num_clients: usize,
    seed: u64,
    round: usize,
) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..num_clients).collect();
    if let Participation::Fraction(f) = participation {
        let take = ((f * num_clients as f64).round() as usize).clamp(1, num_clients);
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::CLIENT_SAMPLING, round as u64));
        ids.shuffle(&mut rng);
        ids.truncate(take);
        ids.sort_unstable();
    }
    ids
}

/// Dev-split accuracies for every client, pooled (micro) and averaged
/// (macro).
pub fn dev_metrics(model: &ModelSpec, w: &ParamVector, dev_sets: &[&Split]) -> Result<DevMetrics> {
    if dev_sets.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let (mut correct, mut total, mut acc_sum) = (0usize, 0usize, 0.0);
    for split in dev_sets {
        let c = correct_count(model, w, split)?;
        correct += c;
        total += split.len();
        acc_sum += c as f64 / split.len() as f64;
    }
    Ok(DevMetrics {
        micro_avg: correct as f64 / total as f64,
        macro_avg: acc_sum / dev_sets.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedRun {
    pub initial: ParamVector,
    pub final_model: ParamVector,
    /// Checkpoint with the best pooled dev accuracy among the evaluated
    /// ones (the initial model included).
    pub best_model: ParamVector,
    pub best_round: Option<usize>,
    pub records: Vec<RoundRecord>,
}

/// Server-side view of a federation.
pub struct Server<'a> {
    pub model: ModelSpec,
    pub algo: &'a AlgorithmSpec,
    /// `|D_i|` indexed by client id.
    pub sizes: &'a [usize],
    /// Dev split per client, for checkpoint selection. Empty disables
    /// evaluation.
    pub dev_sets: Vec<&'a Split>,
    pub seed: u64,
    pub eval_every: usize,
}

impl Server<'_> {
    pub fn initial_model(&self) -> Result<ParamVector> {
        models::init_params(&self.model, seeds::derive(self.seed, seeds::INIT, 0))
    }

    /// Run every round through `executor`, reporting each record to
    /// `on_record` as soon as it is complete.
    pub fn run(
        &self,
        executor: &mut dyn RoundExecutor,
        mut on_record: impl FnMut(&RoundRecord) -> Result<()>,
    ) -> Result<FederatedRun> {
        let n = self.sizes.len();
        if n == 0 {
            return Err(Error::EmptyPopulation);
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be positive".into()));
        }
        self.algo.validate(n)?;
        let evaluate = self.model.is_classification() && !self.dev_sets.is_empty();

        let initial = self.initial_model()?;
        let mut global = initial.clone();
        let mut server_opt = Optimizer::new(self.algo.server_optimizer())?;
        let mut best = (
            if evaluate {
                dev_metrics(&self.model, &global, &self.dev_sets)?.micro_avg
            } else {
                f64::NEG_INFINITY
            },
            global.clone(),
            None,
        );
        let mut records = Vec::with_capacity(self.algo.rounds);

        for t in 0..self.algo.rounds {
            let participants = sample_clients(self.algo.participation, n, self.seed, t);
            let mut updates = executor.collect(t, &global, &participants)?;
            updates.sort_by_key(|u| u.client_id);
            let ids: Vec<usize> = updates.iter().map(|u| u.client_id).collect();
            if ids != participants {
                return Err(Error::Protocol(format!(
                    "round {t}: expected updates from {participants:?}, got {ids:?}"
                )));
            }
            for u in &updates {
                if u.train_size != self.sizes[u.client_id] {
                    return Err(Error::Protocol(format!(
                        "client {} reported size {} (expected {})",
                        u.client_id, u.train_size, self.sizes[u.client_id]
                    )));
                }
            }

            let weights = compute_weights(&updates, self.algo.weighting)?;
            if weights.fallback {
                log::warn!("round {t}: zero loss-reduction denominator, using size weights");
            }
            let (next, aggregate) =
                aggregate_and_update(&mut server_opt, &global, &updates, &weights.values)?;
            global = next;

            let dev = if evaluate && ((t + 1) % self.eval_every == 0 || t + 1 == self.algo.rounds) {
                let m = dev_metrics(&self.model, &global, &self.dev_sets)?;
                if m.micro_avg > best.0 {
                    best = (m.micro_avg, global.clone(), Some(t));
                }
                Some(m)
            } else {
                None
            };

            let record = RoundRecord {
                round: t,
                clients: updates
                    .iter()
                    .zip(&weights.values)
                    .map(|(u, &weight)| ClientRoundLog {
                        client_id: u.client_id,
                        train_size: u.train_size,
                        weight,
                        weighted_loss_reduction: u.weighted_loss_reduction,
                        epoch_losses: u.epoch_losses.clone(),
                    })
                    .collect(),
                weighting_fallback: weights.fallback,
                aggregate_norm: l2_norm_sq(&aggregate)?.sqrt(),
                dev,
            };
            log::debug!("round {t}: |Δw| = {:.6}", record.aggregate_norm);
            on_record(&record)?;
            records.push(record);
        }

        Ok(FederatedRun {
            initial,
            final_model: global,
            best_model: best.1,
            best_round: best.2,
            records,
        })
    }
}

/// Run the full protocol in-process over `population`.
pub fn run_federated(
    algo: &AlgorithmSpec,
    model: &ModelSpec,
    population: &[ClientDataset],
    seed: u64,
    eval_every: usize,
) -> Result<FederatedRun> {
    if population.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    for (i, d) in population.iter().enumerate() {
        if d.client_id != i {
            return Err(Error::InvalidConfig(format!(
                "client ids must be 0..N, found {} at {i}",
                d.client_id
            )));
        }
    }
    let sizes: Vec<usize> = population.iter().map(ClientDataset::size).collect();
    let server = Server {
        model: *model,
        algo,
        sizes: &sizes,
        dev_sets: population.iter().map(|d| &d.dev).collect(),
        seed,
        eval_every,
    };
    let mut executor = InProcess {
        population,
        model: *model,
        algo,
        seed,
    };
    server.run(&mut executor, |_| Ok(()))
}
