//! Drivers behind the CLI subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use otafd_core::channel::{ChannelRealization, DeviceGeometry};
use otafd_core::data::{partition, synth_blobs, BlobSpec, LabeledDataset};
use otafd_core::distill::{ChannelModel, DpBudget, Simulation, TrainingConfig};
use otafd_core::horizon::{brute_force_rounds, objective_coefficients, optimal_rounds, Horizon};
use otafd_core::idx::decode_dataset;
use otafd_core::learner::{self, Architecture};
use otafd_core::privacy::{dp_margin, max_stringency, PrivacyRequirement, PrivacyStringency};
use otafd_core::rng::{derive_seed, stream, Stream};
use otafd_core::transceiver::{
    class_threshold_rounds, design_round, phi2, threshold_rounds, ClassPartition, ClassRegime, Threshold,
};
use otafd_core::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ChannelSpec, DataSpec, ResolvedConfig, Rounds, Values};
use crate::error::{Error, Result};
use crate::output::{
    csv_bytes, fmt_f64, load_checkpoint, read_csv, round_row, save_checkpoint, uplink_time, write_atomic, write_json,
    HorizonInfo, RunSummary, ROUND_COLUMNS,
};

/// Caps the global rayon pool at `OTAFD_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("OTAFD_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config(format!("OTAFD_THREADS: expected a positive integer, got {value:?}")))?;
    // a pool that already exists (tests, repeated calls) keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Seed of replication `r`; replications never share a stream.
pub fn replication_seed(master: u64, replication: u32) -> u64 {
    derive_seed(master, &[Stream::Replication as u64, u64::from(replication)])
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Training and test sets for one replication.
pub fn load_datasets(cfg: &ResolvedConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    match &cfg.data {
        DataSpec::Synthetic { dims, train_per_class, test_per_class, separation } => {
            let spec =
                |n| BlobSpec { num_classes: cfg.classes, dims: *dims, samples_per_class: n, separation: *separation };
            let train = synth_blobs(&spec(*train_per_class), &mut stream(seed, Stream::Data, &[0]))?;
            let test = synth_blobs(&spec(*test_per_class), &mut stream(seed, Stream::Data, &[1]))?;
            Ok((train, test))
        }
        DataSpec::Idx { train_images, train_labels, test_images, test_labels } => {
            let load = |img: &PathBuf, lab: &PathBuf| -> Result<LabeledDataset> {
                let (img, lab) = (cfg.resolve_path(img), cfg.resolve_path(lab));
                decode_dataset(&read_file(&img)?, &read_file(&lab)?, cfg.classes)
                    .map_err(|e| Error::config(format!("data: {} / {}: {e}", img.display(), lab.display())))
            };
            Ok((load(train_images, train_labels)?, load(test_images, test_labels)?))
        }
    }
}

fn channel_model(cfg: &ResolvedConfig) -> Result<ChannelModel> {
    Ok(match &cfg.channel {
        ChannelSpec::Ideal => ChannelModel::Ideal,
        ChannelSpec::Fading { carrier_hz, pathloss_exp, noise_var, distance_m } => ChannelModel::Fading {
            geometries: distance_m
                .iter()
                .map(|&d| DeviceGeometry::new(d, *carrier_hz, *pathloss_exp))
                .collect::<std::result::Result<_, _>>()?,
            noise_var: *noise_var,
        },
    })
}

/// A simulation ready to run, with its horizon resolved.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sim: Simulation,
    pub seed: u64,
    pub horizon: Option<HorizonInfo>,
}

pub fn prepare(cfg: &ResolvedConfig, seed: u64) -> Result<Prepared> {
    let (train, test) = load_datasets(cfg, seed)?;
    if train.len() < cfg.devices {
        return Err(Error::config(format!("data: {} training samples for {} devices", train.len(), cfg.devices)));
    }
    let (shards, _) = partition(&train, cfg.devices, cfg.partition, &mut stream(seed, Stream::Partition, &[]))?;
    let arch = match cfg.model.hidden {
        None => Architecture::Linear { inputs: train.dims(), classes: cfg.classes },
        Some(hidden) => Architecture::Hidden { inputs: train.dims(), hidden, classes: cfg.classes },
    };
    let fixed = match cfg.rounds {
        Rounds::Fixed(t) => t,
        Rounds::Auto(_) => 1,
    };
    let tc = TrainingConfig {
        seed,
        arch,
        init_scale: cfg.model.init_scale,
        gamma: cfg.hyper.gamma,
        eta0: cfg.hyper.eta0,
        rounds: fixed,
        channel: channel_model(cfg)?,
        powers: cfg.power_w.clone(),
        privacy: cfg.privacy.clone(),
    };
    let sim = Simulation::new(tc, shards, test)?;
    if let Rounds::Fixed(_) = cfg.rounds {
        return Ok(Prepared { sim, seed, horizon: None });
    }
    let f_max = match &cfg.hyper.f_max {
        Some(v) => v.clone(),
        None => sim.initial_losses()?,
    };
    let hyper = cfg.hyper.hyper_params(f_max.clone())?;
    let horizon = optimal_rounds(&hyper, sim.partition(), sim.stringencies(), cfg.devices, cfg.classes)?;
    let Horizon::Finite { rounds, continuous } = horizon else {
        return Err(Error::config("rounds: \"auto\" needs an active privacy constraint; set an explicit round count"));
    };
    let clamped = rounds > cfg.max_rounds;
    let rounds_used = rounds.min(cfg.max_rounds);
    Ok(Prepared {
        sim: sim.with_rounds(rounds_used)?,
        seed,
        horizon: Some(HorizonInfo { optimal_rounds: rounds, continuous, f_max, clamped }),
    })
}

pub fn replication_dir(out: &Path, replication: u32) -> PathBuf {
    out.join(format!("rep_{replication:03}"))
}

/// Runs (or, with `resume`, continues) one replication and writes its
/// `rounds.csv` and `summary.json` under `dir`.
pub fn run_replication(cfg: &ResolvedConfig, replication: u32, dir: &Path, resume: bool) -> Result<RunSummary> {
    let started = Instant::now();
    let digest = cfg.digest();
    let prepared = prepare(cfg, replication_seed(cfg.seed, replication))?;
    let sim = &prepared.sim;
    let rounds = sim.config().rounds;
    let csv_path = dir.join("rounds.csv");

    let mut state = sim.initial_state()?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    if resume {
        if let Some((header, saved)) = load_checkpoint(dir)? {
            if header.config_digest != digest || header.seed != prepared.seed {
                return Err(Error::Checkpoint(format!("{} belongs to a different config", dir.display())));
            }
            let (csv_digest, _, existing) = read_csv(&csv_path)?;
            if csv_digest != digest {
                return Err(Error::Checkpoint(format!("{} belongs to a different config", csv_path.display())));
            }
            rows = existing
                .into_iter()
                .filter(|r| r.first().and_then(|c| c.parse::<u64>().ok()).is_some_and(|t| t < saved.next_round))
                .collect();
            if rows.len() as u64 + 1 != saved.next_round {
                return Err(Error::Checkpoint(format!("{} is missing rounds", csv_path.display())));
            }
            state = saved;
        }
    }

    while state.next_round <= rounds {
        let rec = sim.run_round(&mut state)?;
        rows.push(round_row(&rec, cfg.classes, cfg.slot_seconds));
        if cfg.checkpoint_every > 0 && rec.round % cfg.checkpoint_every == 0 && rec.round < rounds {
            write_atomic(&csv_path, &csv_bytes(&digest, &ROUND_COLUMNS, &rows)?)?;
            save_checkpoint(dir, &digest, prepared.seed, &state)?;
        }
    }
    write_atomic(&csv_path, &csv_bytes(&digest, &ROUND_COLUMNS, &rows)?)?;

    let test = sim.test_set();
    let device_accuracy =
        state.models.iter().map(|m| learner::evaluate(m, test)).collect::<std::result::Result<Vec<_>, _>>()?;
    let summary = RunSummary {
        config_digest: digest,
        replication,
        seed: prepared.seed,
        rounds,
        horizon: prepared.horizon.clone(),
        final_accuracy: device_accuracy.iter().sum::<f64>() / device_accuracy.len() as f64,
        device_accuracy,
        total_uplink_time_s: uplink_time(rounds, cfg.classes, cfg.slot_seconds),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// The resolved config next to its digest, as written to `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub config_digest: String,
    pub config: ResolvedConfig,
}

pub fn write_config_echo(cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    write_json(&out.join("config.json"), &ConfigEcho { config_digest: cfg.digest(), config: cfg.clone() })
}

/// All replications, in parallel; one directory per replication.
pub fn run_simulate(cfg: &ResolvedConfig, out: &Path, resume: bool) -> Result<Vec<RunSummary>> {
    write_config_echo(cfg, out)?;
    (0..cfg.replications).into_par_iter().map(|r| run_replication(cfg, r, &replication_dir(out, r), resume)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub replication: u32,
    pub seed: u64,
    pub rounds: u64,
    /// Mean over rounds of the device-averaged `Phi2`.
    pub mean_phi2: f64,
    pub final_accuracy: f64,
    pub uplink_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub epsilon: f64,
    pub count: usize,
    pub mean_phi2_mean: f64,
    pub mean_phi2_std: f64,
    pub final_accuracy_mean: f64,
    pub final_accuracy_std: f64,
    pub uplink_time_s_mean: f64,
    pub uplink_time_s_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub delta: f64,
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub aggregates: Vec<SweepAggregate>,
}

pub const SWEEP_RAW_COLUMNS: [&str; 7] =
    ["epsilon", "replication", "seed", "rounds", "mean_phi2", "final_accuracy", "uplink_time_s"];
pub const SWEEP_AGG_COLUMNS: [&str; 8] = [
    "epsilon",
    "count",
    "mean_phi2_mean",
    "mean_phi2_std",
    "final_accuracy_mean",
    "final_accuracy_std",
    "uplink_time_s_mean",
    "uplink_time_s_std",
];

/// `n` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| match i {
            0 => lo,
            _ if i == n - 1 => hi,
            _ => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

/// Sample mean and (n - 1) standard deviation; the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One aggregate per grid value, over the points at that value.
pub fn aggregate(grid: &[f64], points: &[SweepPoint]) -> Vec<SweepAggregate> {
    grid.iter()
        .map(|&eps| {
            let at: Vec<&SweepPoint> = points.iter().filter(|p| p.epsilon == eps).collect();
            let col = |f: fn(&SweepPoint) -> f64| mean_std(&at.iter().map(|p| f(p)).collect::<Vec<_>>());
            let (pm, ps) = col(|p| p.mean_phi2);
            let (am, as_) = col(|p| p.final_accuracy);
            let (um, us) = col(|p| p.uplink_time_s);
            SweepAggregate {
                epsilon: eps,
                count: at.len(),
                mean_phi2_mean: pm,
                mean_phi2_std: ps,
                final_accuracy_mean: am,
                final_accuracy_std: as_,
                uplink_time_s_mean: um,
                uplink_time_s_std: us,
            }
        })
        .collect()
}

/// Every device gets `(epsilon, delta)`; each grid point runs all
/// replications. Points and replications run in parallel.
pub fn run_sweep_epsilon(cfg: &ResolvedConfig, grid: &[f64], delta: f64) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::config("sweep grid: epsilon must be positive"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("sweep grid: must be strictly increasing"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config("sweep delta: must lie in (0, 1)"));
    }
    let jobs: Vec<(f64, u32)> = grid.iter().flat_map(|&e| (0..cfg.replications).map(move |r| (e, r))).collect();
    let points = jobs
        .into_par_iter()
        .map(|(epsilon, replication)| {
            let mut point_cfg = cfg.clone();
            point_cfg.privacy = Some(vec![DpBudget { epsilon, delta }; cfg.devices]);
            let prepared = prepare(&point_cfg, replication_seed(cfg.seed, replication))?;
            let log = prepared.sim.run()?;
            let rounds = prepared.sim.config().rounds;
            let mean_phi2 = log.records.iter().map(|r| r.mean_phi2()).sum::<f64>() / log.records.len() as f64;
            Ok(SweepPoint {
                epsilon,
                replication,
                seed: prepared.seed,
                rounds,
                mean_phi2,
                final_accuracy: log.final_accuracy().unwrap_or(f64::NAN),
                uplink_time_s: uplink_time(rounds, cfg.classes, cfg.slot_seconds),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregates = aggregate(grid, &points);
    Ok(SweepResult { delta, grid: grid.to_vec(), points, aggregates })
}

pub fn sweep_raw_rows(points: &[SweepPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            vec![
                fmt_f64(p.epsilon),
                p.replication.to_string(),
                p.seed.to_string(),
                p.rounds.to_string(),
                fmt_f64(p.mean_phi2),
                fmt_f64(p.final_accuracy),
                fmt_f64(p.uplink_time_s),
            ]
        })
        .collect()
}

pub fn sweep_aggregate_rows(aggs: &[SweepAggregate]) -> Vec<Vec<String>> {
    aggs.iter()
        .map(|a| {
            vec![
                fmt_f64(a.epsilon),
                a.count.to_string(),
                fmt_f64(a.mean_phi2_mean),
                fmt_f64(a.mean_phi2_std),
                fmt_f64(a.final_accuracy_mean),
                fmt_f64(a.final_accuracy_std),
                fmt_f64(a.uplink_time_s_mean),
                fmt_f64(a.uplink_time_s_std),
            ]
        })
        .collect()
}

/// `sweep_raw.csv`, `sweep_aggregate.csv` and `sweep.json` under `out`.
pub fn write_sweep(cfg: &ResolvedConfig, out: &Path, result: &SweepResult) -> Result<()> {
    let digest = cfg.digest();
    write_config_echo(cfg, out)?;
    write_atomic(
        &out.join("sweep_raw.csv"),
        &csv_bytes(&digest, &SWEEP_RAW_COLUMNS, &sweep_raw_rows(&result.points))?,
    )?;
    write_atomic(
        &out.join("sweep_aggregate.csv"),
        &csv_bytes(&digest, &SWEEP_AGG_COLUMNS, &sweep_aggregate_rows(&result.aggregates))?,
    )?;
    #[derive(Serialize)]
    struct Echo<'a> {
        config_digest: String,
        #[serde(flatten)]
        result: &'a SweepResult,
    }
    write_json(&out.join("sweep.json"), &Echo { config_digest: digest, result })
}

/// Parses `sweep_raw.csv` back into points.
pub fn read_sweep_raw(path: &Path) -> Result<(String, Vec<SweepPoint>)> {
    let (digest, _, rows) = read_csv(path)?;
    let bad = |what: &str| Error::Checkpoint(format!("{}: bad {what}", path.display()));
    let points = rows
        .iter()
        .map(|r| {
            let f = |i: usize| r.get(i).and_then(|c| c.parse::<f64>().ok()).ok_or_else(|| bad(SWEEP_RAW_COLUMNS[i]));
            let u = |i: usize| r.get(i).and_then(|c| c.parse::<u64>().ok()).ok_or_else(|| bad(SWEEP_RAW_COLUMNS[i]));
            Ok(SweepPoint {
                epsilon: f(0)?,
                replication: u(1)? as u32,
                seed: u(2)?,
                rounds: u(3)?,
                mean_phi2: f(4)?,
                final_accuracy: f(5)?,
                uplink_time_s: f(6)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((digest, points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub config_digest: String,
    /// `None` without a privacy constraint.
    pub optimal_rounds: Option<u64>,
    pub continuous: Option<f64>,
    /// Exhaustive minimizer of the same objective; `None` when the search
    /// range would be too large.
    pub oracle: Option<u64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub f_max: Vec<f64>,
    pub max_stringency: f64,
}

const ORACLE_LIMIT: f64 = 1e7;

/// Horizon of replication 0 of `cfg`.
pub fn horizon_report(cfg: &ResolvedConfig) -> Result<HorizonReport> {
    let mut fixed = cfg.clone();
    fixed.rounds = Rounds::Fixed(1);
    let prepared = prepare(&fixed, replication_seed(cfg.seed, 0))?;
    let sim = &prepared.sim;
    let f_max = match &cfg.hyper.f_max {
        Some(v) => v.clone(),
        None => sim.initial_losses()?,
    };
    let hyper = cfg.hyper.hyper_params(f_max.clone())?;
    let coeffs = objective_coefficients(&hyper, sim.partition(), sim.stringencies())?;
    let horizon = optimal_rounds(&hyper, sim.partition(), sim.stringencies(), cfg.devices, cfg.classes)?;
    let (optimal, continuous) = match horizon {
        Horizon::Finite { rounds, continuous } => (Some(rounds), Some(continuous)),
        Horizon::Unbounded => (None, None),
    };
    let oracle = match continuous {
        Some(c) if c <= ORACLE_LIMIT => {
            let t_max = (2.0 * c.ceil()) as u64 + 10;
            Some(brute_force_rounds(&hyper, sim.partition(), sim.stringencies(), t_max)?)
        }
        _ => None,
    };
    Ok(HorizonReport {
        config_digest: cfg.digest(),
        optimal_rounds: optimal,
        continuous,
        oracle,
        a: coeffs.map(|c| c.0),
        b: coeffs.map(|c| c.1),
        f_max,
        max_stringency: max_stringency(sim.stringencies()),
    })
}

/// A channel snapshot for the `design` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSnapshot {
    /// `[re, im]` per device.
    pub coeffs: Vec<[f64; 2]>,
    pub noise_var: f64,
    /// Samples per device and class.
    pub counts: Vec<Vec<u64>>,
    pub power_w: Values,
    pub rounds: u64,
    /// Per-device `(epsilon, delta)`; dataset sizes come from `counts`.
    #[serde(default)]
    pub privacy: Option<Vec<DpBudget>>,
    /// Stringencies given directly (exclusive with `privacy`).
    #[serde(default)]
    pub rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub rounds: u64,
    pub lambda: Vec<f64>,
    pub regimes: Vec<ClassRegime>,
    /// `[device][class]` as `[re, im]`.
    pub p1: Vec<Vec<[f64; 2]>>,
    pub p2_mag: Vec<Vec<f64>>,
    pub power_used: Vec<Vec<f64>>,
    pub dp_margin: Vec<f64>,
    pub phi2: Vec<f64>,
    /// Global switching horizon; `None` when unbounded.
    pub threshold_rounds: Option<f64>,
    pub class_threshold_rounds: Vec<Option<f64>>,
}

fn finite(t: Threshold) -> Option<f64> {
    match t {
        Threshold::Finite(v) => Some(v),
        Threshold::Unbounded => None,
    }
}

pub fn design_report(
    rounds: u64,
    channel: &ChannelRealization,
    partition: &ClassPartition,
    powers: &[f64],
    stringencies: &[PrivacyStringency],
) -> Result<DesignReport> {
    let k = partition.num_classes();
    let m = partition.num_devices();
    let design = design_round(rounds, channel, partition, powers, stringencies, k)?;
    Ok(DesignReport {
        rounds,
        lambda: design.lambdas().to_vec(),
        regimes: (0..k).map(|c| design.regime(c)).collect(),
        p1: (0..m).map(|i| (0..k).map(|c| [design.p1(i, c).re, design.p1(i, c).im]).collect()).collect(),
        p2_mag: (0..m).map(|i| (0..k).map(|c| design.p2_mag(i, c)).collect()).collect(),
        power_used: (0..m).map(|i| (0..k).map(|c| design.power_used(i, c)).collect()).collect(),
        dp_margin: dp_margin(&design, channel, rounds, k, stringencies)?,
        phi2: phi2(&design, channel, partition, k)?,
        threshold_rounds: finite(threshold_rounds(channel, powers, k, stringencies)?),
        class_threshold_rounds: class_threshold_rounds(channel, partition, powers, stringencies)?
            .into_iter()
            .map(finite)
            .collect(),
    })
}

pub fn design_from_snapshot(snap: &ChannelSnapshot) -> Result<DesignReport> {
    let bad = |e: otafd_core::Error| Error::config(format!("snapshot: {e}"));
    let channel =
        ChannelRealization::new(snap.coeffs.iter().map(|&[re, im]| Complex64::new(re, im)).collect(), snap.noise_var)
            .map_err(bad)?;
    let partition = ClassPartition::from_counts(snap.counts.clone()).map_err(bad)?;
    let m = channel.num_devices();
    let powers = match &snap.power_w {
        Values::Scalar(p) => vec![*p; m],
        Values::List(list) => list.clone(),
        Values::Range { .. } => return Err(Error::config("snapshot.power_w: give a value or a list")),
    };
    let stringencies = match (&snap.privacy, &snap.rho) {
        (Some(_), Some(_)) => return Err(Error::config("snapshot: give either privacy or rho")),
        (None, None) => vec![PrivacyStringency::NONE; m],
        (None, Some(rho)) => {
            rho.iter().map(|&r| PrivacyStringency::from_rho(r)).collect::<std::result::Result<_, _>>().map_err(bad)?
        }
        (Some(budgets), None) => {
            if budgets.len() != m {
                return Err(Error::config(format!("snapshot.privacy: expected {m} entries")));
            }
            budgets
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    PrivacyRequirement::new(b.epsilon, b.delta, partition.device_total(i))
                        .and_then(|r| otafd_core::privacy::stringency(&r))
                })
                .collect::<std::result::Result<_, _>>()
                .map_err(bad)?
        }
    };
    design_report(snap.rounds, &channel, &partition, &powers, &stringencies).map_err(|e| match e {
        Error::Core(inner) => bad(inner),
        other => other,
    })
}

/// Design of round `round` of replication 0 of `cfg`.
pub fn design_from_config(cfg: &ResolvedConfig, round: u64) -> Result<DesignReport> {
    let prepared = prepare(cfg, replication_seed(cfg.seed, 0))?;
    let sim = &prepared.sim;
    let channel = sim.channel(round)?;
    design_report(sim.config().rounds, &channel, sim.partition(), &sim.config().powers, sim.stringencies())
}
