//! Experiment configuration.
//!
//! A config file is JSON. Every field is optional; missing fields take the
//! defaults below and are listed in `defaults_applied` of the resolved
//! config. Per-device quantities given as a range are drawn once from the
//! master seed, so the resolved config (and its digest) pins the exact
//! setup of a run.
//!
//! | field | default |
//! |---|---|
//! | `seed` | 0 |
//! | `devices` | 50 |
//! | `classes` | 10 |
//! | `channel.kind` | `"fading"` |
//! | `channel.carrier_hz` | 915e6 |
//! | `channel.pathloss_exp` | 3 |
//! | `channel.noise_var` | 1e-8 W |
//! | `channel.distance_m` | uniform on [100, 500] m |
//! | `power_w` | 1e-3 W |
//! | `privacy.epsilon` | uniform on [0.001, 0.1] |
//! | `privacy.delta` | uniform on [1e-11, 1e-9] |
//! | `hyper` | gamma 0.1, eta0 0.01, l1 10, l2 1, grad_bound 10, f_max `"initial_loss"` |
//! | `rounds` | `"auto"` |
//! | `max_rounds` | 100000 |
//! | `data` | synthetic, dims = classes, 100 train / 50 test per class, separation 4 |
//! | `partition` | iid |
//! | `model` | linear, init_scale 0.01 |
//! | `replications` | 1 |
//! | `slot_seconds` | 3.6e-6 |
//! | `checkpoint_every` | 0 (off) |

use std::path::{Path, PathBuf};

use otafd_core::data::PartitionSpec;
use otafd_core::distill::DpBudget;
use otafd_core::horizon::HyperParams;
use otafd_core::rng::{stream, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A scalar shared by all devices, a range to draw from, or one value per
/// device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Scalar(f64),
    Range { min: f64, max: f64 },
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rounds {
    Fixed(u64),
    Auto(Auto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FMaxPolicy {
    /// Loss of each device's initial model with uniform targets.
    InitialLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FMax {
    Policy(FMaxPolicy),
    Values(Values),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Fading,
    /// Unit gains, no receiver noise, no privacy constraint.
    Ideal,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawChannel {
    pub kind: Option<ChannelKind>,
    pub carrier_hz: Option<f64>,
    pub pathloss_exp: Option<f64>,
    pub noise_var: Option<f64>,
    pub distance_m: Option<Values>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPrivacy {
    pub enabled: Option<bool>,
    pub epsilon: Option<Values>,
    pub delta: Option<Values>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHyper {
    pub gamma: Option<f64>,
    pub eta0: Option<f64>,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub grad_bound: Option<f64>,
    pub f_max: Option<FMax>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawData {
    Synthetic {
        dims: Option<usize>,
        train_per_class: Option<usize>,
        test_per_class: Option<usize>,
        separation: Option<f64>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Hidden,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub kind: Option<ModelKind>,
    /// Width of the `tanh` hidden layer.
    pub hidden: Option<usize>,
    pub init_scale: Option<f64>,
}

/// The config file as written.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub devices: Option<usize>,
    pub classes: Option<usize>,
    pub channel: Option<RawChannel>,
    pub power_w: Option<Values>,
    pub privacy: Option<RawPrivacy>,
    pub hyper: Option<RawHyper>,
    pub rounds: Option<Rounds>,
    pub max_rounds: Option<u64>,
    pub data: Option<RawData>,
    pub partition: Option<PartitionSpec>,
    pub model: Option<RawModel>,
    pub replications: Option<u32>,
    pub slot_seconds: Option<f64>,
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Fading { carrier_hz: f64, pathloss_exp: f64, noise_var: f64, distance_m: Vec<f64> },
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSpec {
    pub gamma: f64,
    pub eta0: f64,
    pub l1: f64,
    pub l2: f64,
    pub grad_bound: f64,
    /// `None` means [`FMaxPolicy::InitialLoss`].
    pub f_max: Option<Vec<f64>>,
}

impl HyperSpec {
    /// Analysis constants with the per-device loss bounds filled in.
    pub fn hyper_params(&self, f_max: Vec<f64>) -> Result<HyperParams> {
        let hp = HyperParams {
            gamma: self.gamma,
            eta0: self.eta0,
            l1: self.l1,
            l2: self.l2,
            grad_bound: self.grad_bound,
            f_max,
        };
        hp.validate().map_err(|e| Error::config(format!("hyper: {e}")))?;
        Ok(hp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic {
        dims: usize,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
    },
    /// Paths as written; relative paths resolve against the config file.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Option<usize>,
    pub init_scale: f64,
}

/// Fully explicit configuration of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub devices: usize,
    pub classes: usize,
    pub channel: ChannelSpec,
    pub power_w: Vec<f64>,
    /// `None` when privacy is disabled.
    pub privacy: Option<Vec<DpBudget>>,
    pub hyper: HyperSpec,
    pub rounds: Rounds,
    pub max_rounds: u64,
    pub data: DataSpec,
    pub partition: PartitionSpec,
    pub model: ModelSpec,
    pub replications: u32,
    pub slot_seconds: f64,
    pub checkpoint_every: u64,
    /// Field paths that were missing and took their default.
    pub defaults_applied: Vec<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ResolvedConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn resolve_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

/// Command-line overrides applied before resolution.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<u32>,
}

pub fn parse_config(text: &str) -> Result<RawConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(format!("{path}: {}", e.into_inner()))
    })
}

pub fn load_config(path: &Path, overrides: Overrides) -> Result<ResolvedConfig> {
    // an unreadable config file is a config problem, not an IO failure
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let raw = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(raw, overrides, base)
}

struct Defaults(Vec<String>);

impl Defaults {
    fn take<T>(&mut self, value: Option<T>, field: &str, default: T) -> T {
        value.unwrap_or_else(|| {
            self.0.push(field.to_string());
            default
        })
    }
}

fn positive(v: f64, field: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(format!("{field}: must be positive and finite, got {v}")))
    }
}

fn non_negative(v: f64, field: &str) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(format!("{field}: must be non-negative and finite, got {v}")))
    }
}

/// Expands `values` to one entry per device. Ranges draw uniformly from a
/// stream labelled by `label`.
fn per_device(values: &Values, devices: usize, seed: u64, label: u64, field: &str) -> Result<Vec<f64>> {
    match values {
        Values::Scalar(v) => Ok(vec![*v; devices]),
        Values::List(list) => {
            if list.len() != devices {
                return Err(Error::config(format!("{field}: expected {devices} values, got {}", list.len())));
            }
            Ok(list.clone())
        }
        Values::Range { min, max } => {
            if !(min.is_finite() && max.is_finite() && min <= max) {
                return Err(Error::config(format!("{field}: empty range [{min}, {max}]")));
            }
            let mut rng = stream(seed, Stream::Setup, &[label]);
            Ok((0..devices).map(|_| if min == max { *min } else { rng.random_range(*min..=*max) }).collect())
        }
    }
}

fn check_each(values: &[f64], field: &str, check: fn(f64, &str) -> Result<f64>) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        check(v, &format!("{field}[{i}]"))?;
    }
    Ok(())
}

const DIST_LABEL: u64 = 1;
const EPS_LABEL: u64 = 2;
const DELTA_LABEL: u64 = 3;
const POWER_LABEL: u64 = 4;
const FMAX_LABEL: u64 = 5;

pub fn resolve(raw: RawConfig, overrides: Overrides, base_dir: PathBuf) -> Result<ResolvedConfig> {
    let mut d = Defaults(Vec::new());
    let seed = match overrides.seed {
        Some(s) => s,
        None => d.take(raw.seed, "seed", 0),
    };
    let devices = d.take(raw.devices, "devices", 50);
    let classes = d.take(raw.classes, "classes", 10);
    if devices == 0 {
        return Err(Error::config("devices: must be at least 1"));
    }
    if classes == 0 {
        return Err(Error::config("classes: must be at least 1"));
    }

    let ch = raw.channel.unwrap_or_default();
    let kind = d.take(ch.kind, "channel.kind", ChannelKind::Fading);
    let channel = match kind {
        ChannelKind::Ideal => ChannelSpec::Ideal,
        ChannelKind::Fading => {
            let carrier_hz = positive(d.take(ch.carrier_hz, "channel.carrier_hz", 915e6), "channel.carrier_hz")?;
            let pathloss_exp =
                non_negative(d.take(ch.pathloss_exp, "channel.pathloss_exp", 3.0), "channel.pathloss_exp")?;
            let noise_var = non_negative(d.take(ch.noise_var, "channel.noise_var", 1e-8), "channel.noise_var")?;
            let dist = d.take(ch.distance_m, "channel.distance_m", Values::Range { min: 100.0, max: 500.0 });
            let distance_m = per_device(&dist, devices, seed, DIST_LABEL, "channel.distance_m")?;
            check_each(&distance_m, "channel.distance_m", positive)?;
            ChannelSpec::Fading { carrier_hz, pathloss_exp, noise_var, distance_m }
        }
    };

    let power = d.take(raw.power_w, "power_w", Values::Scalar(1e-3));
    let power_w = per_device(&power, devices, seed, POWER_LABEL, "power_w")?;
    check_each(&power_w, "power_w", positive)?;

    let pr = raw.privacy.unwrap_or_default();
    let privacy = if d.take(pr.enabled, "privacy.enabled", true) {
        let eps = d.take(pr.epsilon, "privacy.epsilon", Values::Range { min: 0.001, max: 0.1 });
        let delta = d.take(pr.delta, "privacy.delta", Values::Range { min: 1e-11, max: 1e-9 });
        let eps = per_device(&eps, devices, seed, EPS_LABEL, "privacy.epsilon")?;
        let delta = per_device(&delta, devices, seed, DELTA_LABEL, "privacy.delta")?;
        check_each(&eps, "privacy.epsilon", positive)?;
        for (i, &v) in delta.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("privacy.delta[{i}]: must lie in (0, 1), got {v}")));
            }
        }
        Some(eps.into_iter().zip(delta).map(|(epsilon, delta)| DpBudget { epsilon, delta }).collect())
    } else {
        None
    };

    let h = raw.hyper.unwrap_or_default();
    let f_max = match d.take(h.f_max, "hyper.f_max", FMax::Policy(FMaxPolicy::InitialLoss)) {
        FMax::Policy(FMaxPolicy::InitialLoss) => None,
        FMax::Values(v) => {
            let values = per_device(&v, devices, seed, FMAX_LABEL, "hyper.f_max")?;
            check_each(&values, "hyper.f_max", positive)?;
            Some(values)
        }
    };
    let hyper = HyperSpec {
        gamma: non_negative(d.take(h.gamma, "hyper.gamma", 0.1), "hyper.gamma")?,
        eta0: positive(d.take(h.eta0, "hyper.eta0", 0.01), "hyper.eta0")?,
        l1: positive(d.take(h.l1, "hyper.l1", 10.0), "hyper.l1")?,
        l2: positive(d.take(h.l2, "hyper.l2", 1.0), "hyper.l2")?,
        grad_bound: positive(d.take(h.grad_bound, "hyper.grad_bound", 10.0), "hyper.grad_bound")?,
        f_max,
    };

    let rounds = d.take(raw.rounds, "rounds", Rounds::Auto(Auto::Auto));
    match rounds {
        Rounds::Fixed(0) => return Err(Error::config("rounds: must be at least 1")),
        Rounds::Auto(_) if hyper.eta0 > 1.0 / hyper.l1 => {
            return Err(Error::config("hyper.eta0: must not exceed 1 / hyper.l1 when rounds is \"auto\""))
        }
        _ => {}
    }
    let max_rounds = d.take(raw.max_rounds, "max_rounds", 100_000);
    if max_rounds == 0 {
        return Err(Error::config("max_rounds: must be at least 1"));
    }

    let data = match raw.data {
        None => {
            d.0.push("data".into());
            DataSpec::Synthetic { dims: classes.max(1), train_per_class: 100, test_per_class: 50, separation: 4.0 }
        }
        Some(RawData::Synthetic { dims, train_per_class, test_per_class, separation }) => DataSpec::Synthetic {
            dims: d.take(dims, "data.dims", classes.max(1)),
            train_per_class: d.take(train_per_class, "data.train_per_class", 100),
            test_per_class: d.take(test_per_class, "data.test_per_class", 50),
            separation: non_negative(d.take(separation, "data.separation", 4.0), "data.separation")?,
        },
        Some(RawData::Idx { train_images, train_labels, test_images, test_labels }) => {
            DataSpec::Idx { train_images, train_labels, test_images, test_labels }
        }
    };
    if let DataSpec::Synthetic { dims, train_per_class, test_per_class, .. } = &data {
        if *dims == 0 || *dims + 1 < classes {
            return Err(Error::config(format!(
                "data.dims: need at least {} for {classes} classes",
                classes.saturating_sub(1).max(1)
            )));
        }
        if *train_per_class * classes < devices {
            return Err(Error::config("data.train_per_class: fewer training samples than devices"));
        }
        if *test_per_class == 0 {
            return Err(Error::config("data.test_per_class: must be at least 1"));
        }
    }

    let partition = d.take(raw.partition, "partition", PartitionSpec::Iid);
    if let PartitionSpec::Dirichlet { alpha } = partition {
        positive(alpha, "partition.alpha")?;
    }

    let m = raw.model.unwrap_or_default();
    let model_kind = d.take(m.kind, "model.kind", ModelKind::Linear);
    let hidden = match model_kind {
        ModelKind::Linear => None,
        ModelKind::Hidden => {
            let width = d.take(m.hidden, "model.hidden", 16);
            if width == 0 {
                return Err(Error::config("model.hidden: must be at least 1"));
            }
            Some(width)
        }
    };
    let model = ModelSpec {
        hidden,
        init_scale: non_negative(d.take(m.init_scale, "model.init_scale", 0.01), "model.init_scale")?,
    };

    let replications = match overrides.replications {
        Some(r) => r,
        None => d.take(raw.replications, "replications", 1),
    };
    if replications == 0 {
        return Err(Error::config("replications: must be at least 1"));
    }
    let slot_seconds = positive(d.take(raw.slot_seconds, "slot_seconds", 3.6e-6), "slot_seconds")?;
    let checkpoint_every = d.take(raw.checkpoint_every, "checkpoint_every", 0);

    Ok(ResolvedConfig {
        seed,
        devices,
        classes,
        channel,
        power_w,
        privacy,
        hyper,
        rounds,
        max_rounds,
        data,
        partition,
        model,
        replications,
        slot_seconds,
        checkpoint_every,
        defaults_applied: d.0,
        base_dir,
    })
}
