//! One client's side of a round: measure the received global model's
//! class-aware divergence from the prior (`w`), train locally while tracking
//! the same divergence (`ŵ`), and reply with the new parameters and the
//! rescue factor `Σ_k w_k·ŵ_k`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{count_classes, Dataset};
use crate::error::{Error, Result};
use crate::losses::{
    balanced_softmax_ce, classwise_mean, distill_from_projection, total_loss, ClasswiseLoss,
};
use crate::numerics::{
    backward_with_input, forward, random_normal, sgd_step_in_place, Activation, Activations,
    Gradients, Init, MlpParams, Tensor,
};
use crate::prior::EmbeddingTable;
use crate::rng::Rng;

const PROJECTOR_BIAS_STD: f64 = 0.1;

/// Layer widths of the client network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
}

/// Encoder `g`, classifier head over `z = g(x)`, and projector head mapping
/// `z` into the prior's embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientModel {
    pub encoder: MlpParams,
    pub classifier: MlpParams,
    pub projector: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub encoder: Gradients,
    pub classifier: Gradients,
    pub projector: Gradients,
}

impl ModelGradients {
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.encoder.to_vector();
        v.extend(self.classifier.to_vector());
        v.extend(self.projector.to_vector());
        v
    }
}

impl ClientModel {
    /// Encoder `D → H → H` (relu), classifier `H → K`, projector `H → H → E`
    /// (relu hidden, linear output). He-initialized, zero biases.
    pub fn init(shape: ModelShape, rng: &mut Rng) -> Result<Self> {
        let ModelShape {
            feature_dim: d,
            hidden_width: h,
            num_classes: k,
            embed_dim: e,
        } = shape;
        let encoder = MlpParams::init(
            &[d, h, h],
            &[Activation::Relu, Activation::Relu],
            Init::He,
            rng,
        )?;
        let classifier = MlpParams::init(&[h, k], &[Activation::Identity], Init::He, rng)?;
        let projector = MlpParams::init(
            &[h, h, e],
            &[Activation::Relu, Activation::Identity],
            Init::He,
            rng,
        )?;
        // A nonzero output bias keeps the projection off the origin when every hidden unit is off.
        let mut layers = projector.layers().to_vec();
        layers[1].bias = random_normal(1, e, rng);
        layers[1].bias.scale(PROJECTOR_BIAS_STD);
        let projector = MlpParams::new(layers)?;
        Ok(ClientModel {
            encoder,
            classifier,
            projector,
        })
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.classifier.num_params() + self.projector.num_params()
    }

    /// The communicated parameter vector: encoder, classifier, projector.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.encoder.write_vector(&mut v);
        self.classifier.write_vector(&mut v);
        self.projector.write_vector(&mut v);
        v
    }

    /// Rebuilds a model with this architecture from a flat vector.
    pub fn from_vector(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "ClientModel::from_vector",
                self.num_params(),
                flat.len(),
            ));
        }
        let (e, rest) = flat.split_at(self.encoder.num_params());
        let (c, p) = rest.split_at(self.classifier.num_params());
        Ok(ClientModel {
            encoder: self.encoder.from_vector(e)?,
            classifier: self.classifier.from_vector(c)?,
            projector: self.projector.from_vector(p)?,
        })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let z = forward(&self.encoder, x)?.into_output();
        Ok(forward(&self.classifier, &z)?.into_output())
    }

    /// Raw (unnormalized) projector outputs.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        let z = forward(&self.encoder, x)?.into_output();
        Ok(forward(&self.projector, &z)?.into_output())
    }

    fn apply(&mut self, grads: &ModelGradients, lr: f64) -> Result<()> {
        sgd_step_in_place(&mut self.encoder, &grads.encoder, lr)?;
        sgd_step_in_place(&mut self.classifier, &grads.classifier, lr)?;
        sgd_step_in_place(&mut self.projector, &grads.projector, lr)
    }
}

/// Loss terms of one batch and, when requested, their gradients.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub sup: f64,
    pub distill_per_sample: Vec<f64>,
    pub distill: f64,
    pub total: f64,
    pub grads: Option<ModelGradients>,
}

/// Per-layer forward caches, exposed so gradient checks can detect relu kinks.
pub struct ForwardCache {
    pub encoder: Activations,
    pub classifier: Activations,
    pub projector: Activations,
}

pub fn forward_all(model: &ClientModel, x: &Tensor) -> Result<ForwardCache> {
    let encoder = forward(&model.encoder, x)?;
    let classifier = forward(&model.classifier, encoder.output())?;
    let projector = forward(&model.projector, encoder.output())?;
    Ok(ForwardCache {
        encoder,
        classifier,
        projector,
    })
}

/// `L_sup + λ_f·L_f` on a batch. The encoder receives gradient from both
/// terms, the classifier from `L_sup` only, the projector from `L_f` only.
/// With `lambda_f == 0` the projector gradient is exactly zero and the
/// encoder gradient is exactly the supervised one.
pub fn batch_objective(
    model: &ClientModel,
    x: &Tensor,
    labels: &[usize],
    targets: &Tensor,
    class_counts: &[usize],
    lambda_f: f64,
    with_grad: bool,
) -> Result<BatchObjective> {
    let cache = forward_all(model, x)?;
    let (sup, d_logits) = balanced_softmax_ce(cache.classifier.output(), labels, class_counts)?;
    let distill = distill_from_projection(cache.projector.output(), targets)?;
    let total = total_loss(sup, distill.mean, lambda_f);
    let grads = if with_grad {
        let (classifier, mut dz) =
            backward_with_input(&model.classifier, &cache.classifier, &d_logits)?;
        let projector = if lambda_f != 0.0 {
            let mut dp = distill.grad.clone();
            dp.scale(lambda_f);
            let (projector, dz_proj) =
                backward_with_input(&model.projector, &cache.projector, &dp)?;
            dz.add_scaled(1.0, &dz_proj)?;
            projector
        } else {
            model.projector.zero_gradients()
        };
        let (encoder, _) = backward_with_input(&model.encoder, &cache.encoder, &dz)?;
        Some(ModelGradients {
            encoder,
            classifier,
            projector,
        })
    } else {
        None
    };
    Ok(BatchObjective {
        sup,
        distill_per_sample: distill.per_sample,
        distill: distill.mean,
        total,
        grads,
    })
}

/// A client's fixed local slice of the training set.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// Prior embeddings of the local samples, row-aligned with `features`.
    pub targets: Tensor,
    /// Local `M_k`.
    pub class_counts: Vec<usize>,
}

impl ClientData {
    pub fn new(
        client_id: usize,
        train: &Dataset,
        indices: &[usize],
        targets: &EmbeddingTable,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config(format!(
                "client {client_id} has no local data"
            )));
        }
        if targets.len() != train.len() {
            return Err(Error::DataConsistency(format!(
                "{} prior embeddings for {} training samples",
                targets.len(),
                train.len()
            )));
        }
        let labels: Vec<usize> = indices.iter().map(|&i| train.labels()[i]).collect();
        Ok(ClientData {
            client_id,
            indices: indices.to_vec(),
            features: train.features().select_rows(indices),
            targets: targets.select(indices),
            class_counts: count_classes(&labels, train.num_classes()),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }
}

/// Hyperparameters of one local update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Fixed within the round.
    pub lr: f64,
    pub lambda_f: f64,
}

/// Per-class mean distillation loss of `model` over all local samples.
pub fn measure_global_divergence(model: &ClientModel, data: &ClientData) -> Result<ClasswiseLoss> {
    if data.is_empty() {
        return Err(Error::Config(format!(
            "client {} has no local data",
            data.client_id
        )));
    }
    let projection = model.project(&data.features)?;
    let loss = distill_from_projection(&projection, &data.targets)?;
    classwise_mean(&loss.per_sample, &data.labels, data.num_classes())
}

/// `Σ_k w_k·ŵ_k` over classes present in both vectors.
pub fn rescue_factor(w: &[Option<f64>], w_hat: &[Option<f64>]) -> Result<f64> {
    if w.len() != w_hat.len() {
        return Err(Error::shape("rescue_factor", w.len(), w_hat.len()));
    }
    Ok(w.iter()
        .zip(w_hat)
        .filter_map(|(a, b)| Some((*a)? * (*b)?))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub sup: f64,
    pub distill: f64,
    pub total: f64,
}

/// Everything a client knows after its local update. Only
/// [`ClientState::reply`] leaves the client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub num_samples: usize,
    pub class_counts: Vec<usize>,
    /// Divergence of the received global model, measured before training.
    pub w: ClasswiseLoss,
    /// Divergence accumulated during training: per epoch, the mean over
    /// batches containing class `k` of that batch's class-`k` mean loss,
    /// summed over epochs.
    pub w_hat: Vec<Option<f64>>,
    pub rf: f64,
    pub model: ClientModel,
    pub epoch_losses: Vec<EpochLoss>,
}

impl ClientState {
    pub fn recompute_rf(&self) -> f64 {
        rescue_factor(&self.w.per_class, &self.w_hat).expect("w and w_hat share the class count")
    }

    pub fn reply(&self, signal: ReplySignal) -> ClientReply {
        ClientReply {
            params: self.model.to_vector(),
            signal: match signal {
                ReplySignal::RescueFactor => AggregationSignal::Rf(self.rf),
                ReplySignal::SampleCount => AggregationSignal::NumSamples(self.num_samples as u64),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplySignal {
    RescueFactor,
    SampleCount,
}

/// The single scalar a client attaches to its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationSignal {
    Rf(f64),
    NumSamples(u64),
}

/// Client → server message. The sender is identified by the channel, not
/// the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReply {
    pub params: Vec<f64>,
    #[serde(flatten)]
    pub signal: AggregationSignal,
}

/// Server → client message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Broadcast {
    pub round: usize,
    pub params: Vec<f64>,
    pub lr: f64,
}

/// Runs the local procedure on a copy of `global`.
///
/// Faults carry a 1-based epoch; epoch 0 is the divergence measurement on the received model.
pub fn local_update(
    global: &ClientModel,
    data: &ClientData,
    cfg: &LocalConfig,
    rng: &mut Rng,
) -> Result<ClientState> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config(
            "local epochs and batch size must be at least 1".into(),
        ));
    }
    let k = data.num_classes();
    let fault = |epoch: usize, e: Error| match e {
        Error::NumericFault(reason) => Error::ClientFault {
            client: data.client_id,
            epoch,
            reason,
        },
        Error::DegenerateEmbedding { norm, eps } => Error::ClientFault {
            client: data.client_id,
            epoch,
            reason: format!("degenerate projection (norm {norm:e} < {eps:e})"),
        },
        other => other,
    };

    let w = measure_global_divergence(global, data).map_err(|e| fault(0, e))?;
    let mut w_hat: Vec<Option<f64>> = vec![None; k];
    let mut model = global.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut class_sum = vec![0.0; k];
        let mut class_batches = vec![0usize; k];
        let (mut sup_sum, mut distill_sum, mut total_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = data.features.select_rows(batch);
            let t = data.targets.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let obj = batch_objective(
                &model,
                &x,
                &labels,
                &t,
                &data.class_counts,
                cfg.lambda_f,
                true,
            )
            .map_err(|e| fault(epoch, e))?;
            if !obj.total.is_finite() {
                return Err(fault(
                    epoch,
                    Error::NumericFault("non-finite total loss".into()),
                ));
            }
            let grads = obj.grads.as_ref().expect("requested");
            model.apply(grads, cfg.lr).map_err(|e| fault(epoch, e))?;

            let per_class = classwise_mean(&obj.distill_per_sample, &labels, k)?;
            for (c, v) in per_class.present() {
                class_sum[c] += v;
                class_batches[c] += 1;
            }
            sup_sum += obj.sup;
            distill_sum += obj.distill;
            total_sum += obj.total;
            batches += 1;
        }
        for c in 0..k {
            if class_batches[c] > 0 {
                *w_hat[c].get_or_insert(0.0) += class_sum[c] / class_batches[c] as f64;
            }
        }
        let nb = batches as f64;
        epoch_losses.push(EpochLoss {
            sup: sup_sum / nb,
            distill: distill_sum / nb,
            total: total_sum / nb,
        });
    }

    let rf = rescue_factor(&w.per_class, &w_hat)?;
    Ok(ClientState {
        client_id: data.client_id,
        num_samples: data.len(),
        class_counts: data.class_counts.clone(),
        w,
        w_hat,
        rf,
        model,
        epoch_losses,
    })
}
