//! Federated distillation over the air: one round end to end and full
//! training runs.
//!
//! A round realizes the channel, designs the transceiver, extracts every
//! device's per-class knowledge, superposes the encoded uploads, estimates
//! the global knowledge at the server, broadcasts it back and takes one SGD
//! step on every device. All randomness comes from streams keyed by the
//! master seed, the round and the device, so a round can be replayed from a
//! checkpoint of the models alone.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{realize_round, ChannelRealization, DeviceGeometry};
use crate::data::LabeledDataset;
use crate::horizon::BoundSummands;
use crate::learner::{self, Architecture, ModelParams};
use crate::privacy::{self, PrivacyRequirement, PrivacyStringency};
use crate::rng::{stream, Stream};
use crate::simplex::{LocalKnowledge, SimplexVector};
use crate::transceiver::{self, ClassPartition, ClassRegime, TransceiverDesign};
use crate::{Error, Result};

/// Mean soft prediction per class over the device's samples; `None` for
/// classes the device does not hold.
pub fn local_knowledge(params: &ModelParams, data: &LabeledDataset) -> Result<LocalKnowledge> {
    let k = data.num_classes();
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![0usize; k];
    for (x, y) in data.iter() {
        let p = learner::forward(params, x)?;
        if p.len() != k {
            return Err(Error::DimensionMismatch { what: "model classes", expected: k, found: p.len() });
        }
        sums[y].iter_mut().zip(p.as_slice()).for_each(|(s, v)| *s += v);
        counts[y] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| SimplexVector::from_raw(s.into_iter().map(|v| v / n as f64).collect())))
        .collect())
}

/// Transmit symbols of one device: class-major blocks of `K` entries,
/// `x^k = P1_k sqrt(K) q^k + P2_k m^k` with `m^k ~ N(0, I)`. For classes the
/// device does not hold only the noise term is sent; that noise still counts
/// towards the privacy of the other devices.
pub fn encode_signal<R: Rng + ?Sized>(
    design: &TransceiverDesign,
    device: usize,
    h: Complex64,
    knowledge: &LocalKnowledge,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let k = design.num_classes();
    if knowledge.len() != k {
        return Err(Error::DimensionMismatch { what: "knowledge classes", expected: k, found: knowledge.len() });
    }
    let sqrt_k = libm::sqrt(k as f64);
    let mut out = Vec::with_capacity(k * k);
    for (class, q) in knowledge.iter().enumerate() {
        match q {
            Some(q) => {
                let p1 = design.p1(device, class) * sqrt_k;
                let p2 = design.p2_aligned(device, class, h);
                for &qd in q.as_slice() {
                    let m: f64 = rng.sample(StandardNormal);
                    out.push(p1 * qd + p2 * m);
                }
            }
            None => {
                let p2 = design.p2_aligned(device, class, h);
                for _ in 0..k {
                    let m: f64 = rng.sample(StandardNormal);
                    out.push(p2 * m);
                }
            }
        }
    }
    Ok(out)
}

/// `y = sum_i h_i x_i + n` with real receiver noise `n ~ N(0, sigma^2 I)`.
pub fn ota_aggregate<R: Rng + ?Sized>(
    signals: &[Vec<Complex64>],
    channel: &ChannelRealization,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if signals.len() != channel.num_devices() {
        return Err(Error::DimensionMismatch {
            what: "signals vs channel",
            expected: channel.num_devices(),
            found: signals.len(),
        });
    }
    let len = signals[0].len();
    if let Some(s) = signals.iter().find(|s| s.len() != len) {
        return Err(Error::DimensionMismatch { what: "signal length", expected: len, found: s.len() });
    }
    let std_dev = libm::sqrt(channel.noise_var());
    let mut y = vec![Complex64::new(0.0, 0.0); len];
    for (x, &h) in signals.iter().zip(channel.coeffs()) {
        y.iter_mut().zip(x).for_each(|(acc, &v)| *acc += h * v);
    }
    for v in &mut y {
        let n: f64 = rng.sample(StandardNormal);
        v.re += std_dev * n;
    }
    Ok(y)
}

/// `r^k = Re(y^k) / lambda_k`, one vector per class.
pub fn estimate_knowledge(received: &[Complex64], design: &TransceiverDesign) -> Result<Vec<Vec<f64>>> {
    let k = design.num_classes();
    if received.len() != k * k {
        return Err(Error::DimensionMismatch { what: "received symbols", expected: k * k, found: received.len() });
    }
    Ok(received
        .chunks_exact(k)
        .enumerate()
        .map(|(class, block)| block.iter().map(|y| y.re / design.lambda(class)).collect())
        .collect())
}

/// Noise-free global knowledge `sum_j (B_jk / B_k) q_j^k`; zeros for
/// inactive classes.
pub fn ideal_knowledge(partition: &ClassPartition, knowledge: &[LocalKnowledge]) -> Result<Vec<Vec<f64>>> {
    let k = partition.num_classes();
    if knowledge.len() != partition.num_devices() {
        return Err(Error::DimensionMismatch {
            what: "knowledge devices",
            expected: partition.num_devices(),
            found: knowledge.len(),
        });
    }
    let mut out = vec![vec![0.0; k]; k];
    for (j, local) in knowledge.iter().enumerate() {
        for (class, q) in local.iter().enumerate() {
            if let Some(q) = q {
                let share = partition.share(j, class);
                out[class].iter_mut().zip(q.as_slice()).for_each(|(o, v)| *o += share * v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ChannelModel {
    /// Path loss and Rayleigh block fading with receiver noise.
    Fading { geometries: Vec<DeviceGeometry>, noise_var: f64 },
    /// Unit gains, no receiver noise and no privacy constraint.
    Ideal,
}

/// Per-device `(epsilon, delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DpBudget {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingConfig {
    pub seed: u64,
    pub arch: Architecture,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
    pub gamma: f64,
    pub eta0: f64,
    pub rounds: u64,
    pub channel: ChannelModel,
    /// Peak transmit power per device.
    pub powers: Vec<f64>,
    /// `None` disables the privacy constraint.
    pub privacy: Option<Vec<DpBudget>>,
}

/// Everything logged about one round.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    /// 1-based.
    pub round: u64,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    /// Local loss against the received targets, before the update.
    pub train_loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// Mean over devices of the test accuracy after the update.
    pub test_accuracy: f64,
    pub device_accuracy: Vec<f64>,
    /// Per class; non-negative iff the privacy condition holds.
    pub dp_margin: Vec<f64>,
    /// `[device][class]`.
    pub power_used: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub regimes: Vec<ClassRegime>,
    /// Broadcast targets `[class][entry]`.
    pub estimate: Vec<Vec<f64>>,
}

impl RoundRecord {
    pub fn mean_phi1(&self) -> f64 {
        mean(&self.phi1)
    }

    pub fn mean_phi2(&self) -> f64 {
        mean(&self.phi2)
    }

    pub fn mean_train_loss(&self) -> f64 {
        mean(&self.train_loss)
    }

    pub fn min_dp_margin(&self) -> f64 {
        self.dp_margin.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Models of every device and the next round to run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingState {
    pub next_round: u64,
    pub models: Vec<ModelParams>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingLog {
    pub records: Vec<RoundRecord>,
    pub summands: BoundSummands,
    pub final_state: TrainingState,
}

impl TrainingLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_accuracy)
    }
}

/// A configured run over fixed local datasets.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: TrainingConfig,
    shards: Vec<LabeledDataset>,
    partition: ClassPartition,
    test: LabeledDataset,
    stringencies: Vec<PrivacyStringency>,
}

impl Simulation {
    pub fn new(config: TrainingConfig, shards: Vec<LabeledDataset>, test: LabeledDataset) -> Result<Self> {
        let m = shards.len();
        if m == 0 {
            return Err(Error::Empty("devices"));
        }
        if config.rounds == 0 {
            return Err(Error::domain("need at least one round"));
        }
        if !(config.eta0 > 0.0 && config.eta0.is_finite()) {
            return Err(Error::domain("eta0 must be positive"));
        }
        if !(config.gamma >= 0.0 && config.gamma.is_finite()) {
            return Err(Error::domain("gamma must be non-negative"));
        }
        if config.powers.len() != m {
            return Err(Error::DimensionMismatch { what: "power budgets", expected: m, found: config.powers.len() });
        }
        if let ChannelModel::Fading { geometries, .. } = &config.channel {
            if geometries.len() != m {
                return Err(Error::DimensionMismatch { what: "geometries", expected: m, found: geometries.len() });
            }
        }
        let k = config.arch.classes();
        for shard in shards.iter().chain(core::iter::once(&test)) {
            if shard.num_classes() != k || shard.dims() != config.arch.inputs() {
                return Err(Error::domain("dataset shape does not match the architecture"));
            }
        }
        let partition = ClassPartition::from_counts(shards.iter().map(LabeledDataset::class_counts).collect())?;
        let stringencies = stringencies(&config, &partition)?;
        Ok(Simulation { config, shards, partition, test, stringencies })
    }

    /// Same run with a different horizon (the design depends on `T`).
    pub fn with_rounds(mut self, rounds: u64) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::domain("need at least one round"));
        }
        self.config.rounds = rounds;
        Ok(self)
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn partition(&self) -> &ClassPartition {
        &self.partition
    }

    pub fn stringencies(&self) -> &[PrivacyStringency] {
        &self.stringencies
    }

    pub fn shards(&self) -> &[LabeledDataset] {
        &self.shards
    }

    pub fn test_set(&self) -> &LabeledDataset {
        &self.test
    }

    /// Independent initial models, one stream per device.
    pub fn initial_state(&self) -> Result<TrainingState> {
        let models = (0..self.shards.len())
            .map(|i| {
                let mut rng = stream(self.config.seed, Stream::Init, &[i as u64]);
                ModelParams::random(self.config.arch, self.config.init_scale, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingState { next_round: 1, models })
    }

    /// Loss of every initial model with uniform targets.
    pub fn initial_losses(&self) -> Result<Vec<f64>> {
        let k = self.config.arch.classes();
        let uniform = vec![SimplexVector::uniform(k).into_inner(); k];
        let state = self.initial_state()?;
        state.models.iter().zip(&self.shards).map(|(p, d)| learner::loss(p, d, &uniform, self.config.gamma)).collect()
    }

    pub fn channel(&self, round: u64) -> Result<ChannelRealization> {
        match &self.config.channel {
            ChannelModel::Fading { geometries, noise_var } => {
                realize_round(geometries, *noise_var, &mut stream(self.config.seed, Stream::Fading, &[round]))
            }
            ChannelModel::Ideal => ChannelRealization::ideal(self.shards.len(), 0.0),
        }
    }

    pub fn design(&self, channel: &ChannelRealization) -> Result<TransceiverDesign> {
        transceiver::design_round(
            self.config.rounds,
            channel,
            &self.partition,
            &self.config.powers,
            &self.stringencies,
            self.config.arch.classes(),
        )
    }

    /// Runs round `state.next_round` and advances the state.
    pub fn run_round(&self, state: &mut TrainingState) -> Result<RoundRecord> {
        let round = state.next_round;
        if round == 0 || round > self.config.rounds {
            return Err(Error::domain(alloc::format!("round {round} outside 1..={}", self.config.rounds)));
        }
        let m = self.shards.len();
        let k = self.config.arch.classes();
        let seed = self.config.seed;

        let channel = self.channel(round)?;
        let design = self.design(&channel)?;
        let knowledge =
            state.models.iter().zip(&self.shards).map(|(p, d)| local_knowledge(p, d)).collect::<Result<Vec<_>>>()?;
        let signals = (0..m)
            .map(|i| {
                let mut rng = stream(seed, Stream::DpNoise, &[round, i as u64]);
                encode_signal(&design, i, channel.coeff(i), &knowledge[i], &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let received = ota_aggregate(&signals, &channel, &mut stream(seed, Stream::ChannelNoise, &[round]))?;
        let estimate = estimate_knowledge(&received, &design)?;

        let phi1 = transceiver::phi1(&design, &channel, &self.partition, &knowledge)?;
        let phi2 = transceiver::phi2(&design, &channel, &self.partition, k)?;
        let dp_margin = privacy::dp_margin(&design, &channel, self.config.rounds, k, &self.stringencies)?;
        let power_used = (0..m).map(|i| (0..k).map(|c| design.power_used(i, c)).collect()).collect();

        let mut train_loss = Vec::with_capacity(m);
        let mut grad_norm = Vec::with_capacity(m);
        let mut device_accuracy = Vec::with_capacity(m);
        for (model, shard) in state.models.iter_mut().zip(&self.shards) {
            let (loss, grad) = learner::loss_and_gradient(model, shard, &estimate, self.config.gamma)?;
            train_loss.push(loss);
            grad_norm.push(libm::sqrt(grad.iter().map(|g| g * g).sum()));
            *model = learner::sgd_step(model, &grad, round, self.config.eta0)?;
            device_accuracy.push(learner::evaluate(model, &self.test)?);
        }
        state.next_round += 1;

        Ok(RoundRecord {
            round,
            phi1,
            phi2,
            train_loss,
            grad_norm,
            test_accuracy: mean(&device_accuracy),
            device_accuracy,
            dp_margin,
            power_used,
            lambda: design.lambdas().to_vec(),
            regimes: (0..k).map(|c| design.regime(c)).collect(),
            estimate,
        })
    }

    /// Continues from `state` to the last round.
    pub fn resume(&self, mut state: TrainingState) -> Result<TrainingLog> {
        let m = self.shards.len();
        let mut records = Vec::new();
        let mut summands = BoundSummands::with_devices(m);
        while state.next_round <= self.config.rounds {
            let rec = self.run_round(&mut state)?;
            for i in 0..m {
                summands.push(i, rec.phi1[i], rec.phi2[i], rec.grad_norm[i]);
            }
            records.push(rec);
        }
        Ok(TrainingLog { records, summands, final_state: state })
    }

    pub fn run(&self) -> Result<TrainingLog> {
        self.resume(self.initial_state()?)
    }
}

/// Stringency of every device; all zero without privacy or on the ideal
/// channel.
pub fn stringencies(config: &TrainingConfig, partition: &ClassPartition) -> Result<Vec<PrivacyStringency>> {
    let m = partition.num_devices();
    match (&config.privacy, &config.channel) {
        (None, _) | (_, ChannelModel::Ideal) => Ok(vec![PrivacyStringency::NONE; m]),
        (Some(budgets), _) => {
            if budgets.len() != m {
                return Err(Error::DimensionMismatch { what: "privacy budgets", expected: m, found: budgets.len() });
            }
            budgets
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let req = PrivacyRequirement::new(b.epsilon, b.delta, partition.device_total(i))?;
                    privacy::stringency(&req)
                })
                .collect()
        }
    }
}
