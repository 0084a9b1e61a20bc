//! Server side: the round loop and the two aggregation rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{
    local_update, AggregationSignal, Broadcast, ClientData, ClientModel, ClientReply, ClientState,
    EpochLoss, LocalConfig, ModelShape, ReplySignal,
};
use crate::config::{ExperimentConfig, Method};
use crate::data::{Dataset, Partition, ShotGroups};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::numerics::cosine_lr;
use crate::prior::Prior;
use crate::rng::{client_round_seed, rng_from_seed, stage_seed, Stage};

/// `Σ_c weights[c]·params[c]`, accumulated in client order.
pub fn weighted_average<P: AsRef<[f64]>>(params: &[P], weights: &[f64]) -> Result<Vec<f64>> {
    let first = params
        .first()
        .ok_or_else(|| Error::Contract("cannot aggregate zero clients".into()))?;
    if params.len() != weights.len() {
        return Err(Error::shape(
            "weighted_average",
            params.len(),
            weights.len(),
        ));
    }
    let n = first.as_ref().len();
    let mut out = vec![0.0; n];
    for (p, &w) in params.iter().zip(weights) {
        let p = p.as_ref();
        if p.len() != n {
            return Err(Error::Contract(format!(
                "parameter vectors differ in length ({n} vs {})",
                p.len()
            )));
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFault(
            "aggregated parameters are not finite".into(),
        ));
    }
    Ok(out)
}

/// Normalized rescue factors `RF_c / Σ_j RF_j`.
pub fn mas_weights(rfs: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = rfs.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Contract(format!(
            "rescue factors must be finite and non-negative, got {bad}"
        )));
    }
    let total: f64 = rfs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(rfs.iter().map(|r| r / total).collect())
}

/// Sample-count weights `n_c / Σ_j n_j`.
pub fn fedavg_weights(sample_counts: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = sample_counts.iter().sum();
    if total == 0 {
        return Err(Error::Contract("total sample count is zero".into()));
    }
    Ok(sample_counts
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect())
}

/// Rescue-factor weighted model average.
pub fn mas_aggregate<P: AsRef<[f64]>>(client_params: &[P], rfs: &[f64]) -> Result<Vec<f64>> {
    weighted_average(client_params, &mas_weights(rfs)?)
}

/// Sample-count weighted model average.
pub fn fedavg_aggregate<P: AsRef<[f64]>>(
    client_params: &[P],
    sample_counts: &[u64],
) -> Result<Vec<f64>> {
    weighted_average(client_params, &fedavg_weights(sample_counts)?)
}

/// Instrumentation kept by the simulator for one client and round. None of
/// it is part of the client's reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundSummary {
    pub client_id: usize,
    pub num_samples: usize,
    pub w: Vec<Option<f64>>,
    pub w_hat: Vec<Option<f64>>,
    pub rf: f64,
    pub epoch_losses: Vec<EpochLoss>,
}

impl From<&ClientState> for ClientRoundSummary {
    fn from(s: &ClientState) -> Self {
        ClientRoundSummary {
            client_id: s.client_id,
            num_samples: s.num_samples,
            w: s.w.per_class.clone(),
            w_hat: s.w_hat.clone(),
            rf: s.rf,
            epoch_losses: s.epoch_losses.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 0-based.
    pub round: usize,
    pub lr: f64,
    pub rf: Vec<f64>,
    /// Aggregation weights actually applied; non-negative, summing to 1.
    pub weights: Vec<f64>,
    /// Running mean of `weights` over rounds `0..=round`.
    pub contribution: Vec<f64>,
    /// Rescue factors summed to zero and sample-count weights were used.
    pub fallback: bool,
    pub metrics: Option<MetricsReport>,
    pub clients: Vec<ClientRoundSummary>,
}

#[derive(Debug, Clone)]
pub struct GlobalState {
    /// Number of completed rounds.
    pub round: usize,
    pub params: Vec<f64>,
    pub history: Vec<RoundReport>,
}

/// Everything a federation run consumes besides its configuration.
#[derive(Debug, Clone, Copy)]
pub struct FederationInput<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub partition: &'a Partition,
    pub prior: &'a Prior,
    pub shot_groups: &'a ShotGroups,
}

pub fn model_shape(config: &ExperimentConfig, train: &Dataset, embed_dim: usize) -> ModelShape {
    ModelShape {
        feature_dim: train.feature_dim(),
        hidden_width: config.hidden_width,
        num_classes: train.num_classes(),
        embed_dim,
    }
}

/// The seeded global model every run starts from.
pub fn initial_model(config: &ExperimentConfig, shape: ModelShape) -> Result<ClientModel> {
    ClientModel::init(
        shape,
        &mut rng_from_seed(stage_seed(config.seed, Stage::Init)),
    )
}

fn should_evaluate(round: usize, config: &ExperimentConfig) -> bool {
    (round + 1).is_multiple_of(config.eval_every) || round + 1 == config.rounds
}

/// Runs `config.rounds` rounds of broadcast, local updates, and aggregation.
/// `threads` caps the client fan-out; results do not depend on it.
pub fn run_federation(
    config: &ExperimentConfig,
    input: FederationInput<'_>,
    threads: Option<usize>,
) -> Result<GlobalState> {
    config.validate()?;
    let FederationInput {
        train,
        test,
        partition,
        prior,
        shot_groups,
    } = input;
    let targets = prior.targets_for(train)?;
    let clients: Vec<ClientData> = partition
        .assignments()
        .iter()
        .enumerate()
        .map(|(c, idx)| ClientData::new(c, train, idx, &targets))
        .collect::<Result<_>>()?;
    let sample_counts: Vec<u64> = clients.iter().map(|c| c.len() as u64).collect();

    let template = initial_model(config, model_shape(config, train, prior.embed_dim()))?;
    let mut params = template.to_vector();
    let train_seed = stage_seed(config.seed, Stage::Train);
    let signal = if config.method.uses_rescue_weights() {
        ReplySignal::RescueFactor
    } else {
        ReplySignal::SampleCount
    };
    let pool = match threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        ),
        None => None,
    };

    let mut history = Vec::with_capacity(config.rounds);
    let mut contribution_sum = vec![0.0; clients.len()];
    for round in 0..config.rounds {
        let broadcast = Broadcast {
            round,
            params,
            lr: cosine_lr(round, config.rounds, config.lr_max, config.lr_min)?,
        };
        let global = template.from_vector(&broadcast.params)?;
        let local_cfg = LocalConfig {
            epochs: config.local_epochs,
            batch_size: config.batch_size,
            lr: broadcast.lr,
            lambda_f: config.effective_lambda_f(),
        };
        let work = || -> Vec<Result<ClientState>> {
            clients
                .par_iter()
                .map(|data| {
                    let mut rng =
                        rng_from_seed(client_round_seed(train_seed, round, data.client_id));
                    local_update(&global, data, &local_cfg, &mut rng)
                })
                .collect()
        };
        let states: Vec<ClientState> = match &pool {
            Some(p) => p.install(work),
            None => work(),
        }
        .into_iter()
        .collect::<Result<_>>()?;

        let replies: Vec<ClientReply> = states.iter().map(|s| s.reply(signal)).collect();
        let (weights, fallback) = aggregation_weights(config.method, &replies, &sample_counts)?;
        params = weighted_average(
            &replies.iter().map(|r| &r.params[..]).collect::<Vec<_>>(),
            &weights,
        )?;

        for (acc, w) in contribution_sum.iter_mut().zip(&weights) {
            *acc += w;
        }
        let metrics = if should_evaluate(round, config) {
            Some(evaluate(
                &template.from_vector(&params)?,
                test,
                shot_groups,
            )?)
        } else {
            None
        };
        history.push(RoundReport {
            round,
            lr: broadcast.lr,
            rf: states.iter().map(|s| s.rf).collect(),
            contribution: contribution_sum
                .iter()
                .map(|s| s / (round + 1) as f64)
                .collect(),
            weights,
            fallback,
            metrics,
            clients: states.iter().map(ClientRoundSummary::from).collect(),
        });
    }
    Ok(GlobalState {
        round: config.rounds,
        params,
        history,
    })
}

/// Weights the server derives from the replies. Under `fedmas`, an all-zero
/// set of rescue factors falls back to the sample counts known to the server.
fn aggregation_weights(
    method: Method,
    replies: &[ClientReply],
    sample_counts: &[u64],
) -> Result<(Vec<f64>, bool)> {
    if method.uses_rescue_weights() {
        let rfs = replies
            .iter()
            .map(|r| match r.signal {
                AggregationSignal::Rf(v) => Ok(v),
                AggregationSignal::NumSamples(_) => Err(Error::Contract(
                    "fedmas reply without a rescue factor".into(),
                )),
            })
            .collect::<Result<Vec<f64>>>()?;
        match mas_weights(&rfs) {
            Ok(w) => Ok((w, false)),
            Err(Error::DegenerateWeights) => Ok((fedavg_weights(sample_counts)?, true)),
            Err(e) => Err(e),
        }
    } else {
        let counts = replies
            .iter()
            .map(|r| match r.signal {
                AggregationSignal::NumSamples(n) => Ok(n),
                AggregationSignal::Rf(_) => {
                    Err(Error::Contract("sample-count reply expected".into()))
                }
            })
            .collect::<Result<Vec<u64>>>()?;
        Ok((fedavg_weights(&counts)?, false))
    }
}
