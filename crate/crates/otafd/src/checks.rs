//! Numerical self-checks behind `otafd validate`: every closed form is
//! compared against an independent computation (brute force, finite
//! differences or Monte Carlo) on seeded random instances.

use std::fmt;

use otafd_core::channel::ChannelRealization;
use otafd_core::data::LabeledDataset;
use otafd_core::distill::{encode_signal, estimate_knowledge, ideal_knowledge, ota_aggregate};
use otafd_core::horizon::{brute_force_rounds, optimal_rounds, Horizon, HyperParams};
use otafd_core::learner::{gradient, loss, Architecture, ModelParams};
use otafd_core::privacy::{dp_margin, PrivacyStringency};
use otafd_core::rng::{stream, SimRng, Stream};
use otafd_core::simplex::{LocalKnowledge, SimplexVector};
use otafd_core::transceiver::{design_round, phi1, phi2, ClassPartition, ClassRegime, TransceiverDesign};
use otafd_core::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Worst value seen; compared against `tolerance`.
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<22} measured={:<12.4e} tolerance={:<10.3e} {}  ({})",
            self.name,
            self.measured,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Scales `lambda` of every noise-limited class after the design is
    /// solved, without re-solving `P2`. A negative control: the DP equality
    /// check must then fail.
    pub perturb_lambda: Option<f64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { seed: 2024, perturb_lambda: None }
    }
}

fn outcome(name: &'static str, measured: f64, tolerance: f64, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, measured, tolerance, passed, detail }
}

fn failed(name: &'static str, tolerance: f64, e: impl fmt::Display) -> CheckOutcome {
    outcome(name, f64::NAN, tolerance, false, format!("error: {e}"))
}

fn rng_for(seed: u64, check: u64) -> SimRng {
    stream(seed, Stream::Setup, &[1000 + check])
}

fn log_uniform(rng: &mut SimRng, lo_exp: f64, hi_exp: f64) -> f64 {
    10f64.powf(rng.random_range(lo_exp..hi_exp))
}

/// A uniformly random point of the `k`-simplex.
pub fn random_simplex(rng: &mut SimRng, k: usize) -> SimplexVector {
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = raw.iter().sum();
    SimplexVector::new(raw.iter().map(|v| v / sum).collect()).expect("normalized")
}

/// One random design problem.
#[derive(Debug, Clone)]
pub struct DesignInstance {
    pub rounds: u64,
    pub channel: ChannelRealization,
    pub partition: ClassPartition,
    pub powers: Vec<f64>,
    pub stringencies: Vec<PrivacyStringency>,
    pub knowledge: Vec<LocalKnowledge>,
}

impl DesignInstance {
    pub fn classes(&self) -> usize {
        self.partition.num_classes()
    }

    pub fn design(&self) -> Result<TransceiverDesign> {
        Ok(design_round(self.rounds, &self.channel, &self.partition, &self.powers, &self.stringencies, self.classes())?)
    }
}

/// Channel gains, noise levels, budgets and stringencies span many orders
/// of magnitude so that both regimes show up.
pub fn random_instance(rng: &mut SimRng, max_devices: usize, max_classes: usize) -> DesignInstance {
    let m = rng.random_range(1..=max_devices);
    let k = rng.random_range(1..=max_classes);
    let counts: Vec<Vec<u64>> = (0..m)
        .map(|_| (0..k).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(1..200) }).collect())
        .collect();
    let coeffs = (0..m)
        .map(|_| {
            let g = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                * std::f64::consts::FRAC_1_SQRT_2;
            g * log_uniform(rng, -6.0, 0.0) + Complex64::new(1e-12, 0.0)
        })
        .collect();
    let channel = ChannelRealization::new(coeffs, log_uniform(rng, -12.0, -2.0)).expect("valid channel");
    let powers = (0..m).map(|_| log_uniform(rng, -4.0, 0.0)).collect();
    let stringencies =
        (0..m).map(|_| PrivacyStringency::from_rho(log_uniform(rng, -10.0, 2.0)).expect("positive")).collect();
    let knowledge =
        counts.iter().map(|row| row.iter().map(|&n| (n > 0).then(|| random_simplex(rng, k))).collect()).collect();
    DesignInstance {
        rounds: rng.random_range(1..5000),
        channel,
        partition: ClassPartition::from_counts(counts).expect("valid counts"),
        powers,
        stringencies,
        knowledge,
    }
}

/// Relative misalignment `Phi1_i / sum_k (B_ik/B_i) ||r^k||` over random
/// instances (the denominator is the magnitude of the target signal).
pub fn alignment(seed: u64, instances: usize) -> CheckOutcome {
    const NAME: &str = "alignment";
    const TOL: f64 = 1e-9;
    let mut rng = rng_for(seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 50, 10);
        let run = || -> Result<f64> {
            let design = inst.design()?;
            let target = ideal_knowledge(&inst.partition, &inst.knowledge)?;
            let norms: Vec<f64> = target.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
            let errs = phi1(&design, &inst.channel, &inst.partition, &inst.knowledge)?;
            Ok(errs
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let scale: f64 = (0..inst.classes()).map(|k| inst.partition.weight(i, k) * norms[k]).sum();
                    if scale > 0.0 {
                        e / scale
                    } else {
                        *e
                    }
                })
                .fold(0.0, f64::max))
        };
        match run() {
            Ok(v) => worst = worst.max(v),
            Err(e) => return failed(NAME, TOL, e),
        }
    }
    outcome(NAME, worst, TOL, worst <= TOL, format!("{instances} instances, max relative Phi1"))
}

/// Noise-limited classes meet the privacy condition with equality; the
/// others carry no artificial noise and meet it with slack.
pub fn dp_equality(seed: u64, instances: usize, perturb_lambda: Option<f64>) -> CheckOutcome {
    const NAME: &str = "dp_equality";
    const TOL: f64 = 1e-9;
    // slack allowed on the channel-noise side for rounding only
    const SLACK: f64 = 1e-12;
    let mut rng = rng_for(seed, 1);
    let (mut worst, mut case1, mut case2, mut case1_bad) = (0.0f64, 0usize, 0usize, 0usize);
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 50, 10);
        let mut run = || -> Result<()> {
            let mut design = inst.design()?;
            let k = inst.classes();
            let noise_limited: Vec<bool> =
                (0..k).map(|c| matches!(design.regime(c), ClassRegime::DpNoise { .. })).collect();
            if let Some(f) = perturb_lambda {
                for c in (0..k).filter(|&c| noise_limited[c]) {
                    let l = design.lambda(c) * f;
                    design.set_lambda(c, l, &inst.partition, &inst.channel)?;
                }
            }
            let margins = dp_margin(&design, &inst.channel, inst.rounds, k, &inst.stringencies)?;
            for c in 0..k {
                let lhs = design.received_noise_power(&inst.channel, c);
                let rhs = lhs - margins[c];
                if noise_limited[c] {
                    case2 += 1;
                    worst = worst.max(margins[c].abs() / rhs);
                } else if inst.partition.is_active(c) {
                    case1 += 1;
                    let silent = (0..inst.channel.num_devices()).all(|i| design.p2_mag(i, c) == 0.0);
                    if !silent || margins[c] < -SLACK * rhs.max(lhs) {
                        case1_bad += 1;
                    }
                }
            }
            Ok(())
        };
        if let Err(e) = run() {
            return failed(NAME, TOL, e);
        }
    }
    let passed = worst <= TOL && case1_bad == 0 && case2 > 0;
    outcome(
        NAME,
        worst,
        TOL,
        passed,
        format!(
            "{case2} noise-limited classes (max |margin|/rhs), {case1} channel-noise classes, {case1_bad} violating"
        ),
    )
}

/// `|P1|^2 + |P2|^2 <= P_i` everywhere, and at the full-power optimum every
/// device spends exactly `P_i`.
pub fn power(seed: u64, instances: usize) -> CheckOutcome {
    const NAME: &str = "power";
    const TOL: f64 = 1e-9;
    let mut rng = rng_for(seed, 1);
    let (mut excess, mut full_gap, mut full_classes) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 50, 10);
        let design = match inst.design() {
            Ok(d) => d,
            Err(e) => return failed(NAME, TOL, e),
        };
        for c in 0..inst.classes() {
            let full = design.regime(c) == ClassRegime::DpNoise { full_power: true };
            full_classes += usize::from(full);
            for (i, &p) in inst.powers.iter().enumerate() {
                let rel = (design.power_used(i, c) - p) / p;
                excess = excess.max(rel);
                if full {
                    full_gap = full_gap.max(rel.abs());
                }
            }
        }
    }
    let worst = excess.max(full_gap);
    outcome(
        NAME,
        worst,
        TOL,
        worst <= TOL,
        format!("max relative excess {excess:.3e}; {full_classes} full-power classes, max gap {full_gap:.3e}"),
    )
}

fn random_hyper(rng: &mut SimRng, devices: usize) -> HyperParams {
    let l1 = log_uniform(rng, 0.0, 2.0);
    HyperParams {
        gamma: log_uniform(rng, -2.0, 0.0),
        eta0: rng.random_range(0.05..1.0) / l1,
        l1,
        l2: log_uniform(rng, -1.0, 1.0),
        grad_bound: log_uniform(rng, -1.0, 1.0),
        f_max: (0..devices).map(|_| log_uniform(rng, -1.0, 1.0)).collect(),
    }
}

/// The example with a hand-derived optimum of 12500 rounds.
pub fn worked_horizon() -> Result<(u64, u64)> {
    let hyper = HyperParams { gamma: 1.0, eta0: 0.01, l1: 1.0, l2: 1.0, grad_bound: 1.0, f_max: vec![1.0, 1.0] };
    let partition = ClassPartition::from_counts(vec![vec![50, 50], vec![50, 50]])?;
    let rho = [PrivacyStringency::from_rho(0.2)?, PrivacyStringency::from_rho(0.1)?];
    let Horizon::Finite { rounds, .. } = optimal_rounds(&hyper, &partition, &rho, 2, 2)? else {
        return Err(crate::error::Error::Checkpoint("worked horizon unbounded".into()));
    };
    Ok((rounds, brute_force_rounds(&hyper, &partition, &rho, 30_000)?))
}

/// Closed-form horizon against exhaustive search.
pub fn horizon_oracle(seed: u64, instances: usize) -> CheckOutcome {
    const NAME: &str = "horizon_oracle";
    const TOL: f64 = 1.0;
    const T_LIMIT: f64 = 2e5;
    let mut rng = rng_for(seed, 4);
    let mut worst = 0u64;
    let mut done = 0;
    while done < instances {
        let m = rng.random_range(1..=10);
        let k = rng.random_range(1..=5);
        let hyper = random_hyper(&mut rng, m);
        let counts: Vec<Vec<u64>> = (0..m).map(|_| (0..k).map(|_| rng.random_range(1..100)).collect()).collect();
        let rho: Vec<PrivacyStringency> =
            (0..m).map(|_| PrivacyStringency::from_rho(log_uniform(&mut rng, -6.0, 2.0)).expect("positive")).collect();
        let run = || -> Result<Option<u64>> {
            let partition = ClassPartition::from_counts(counts.clone())?;
            let Horizon::Finite { rounds, continuous } = optimal_rounds(&hyper, &partition, &rho, m, k)? else {
                return Ok(None);
            };
            // keep the exhaustive search affordable
            if continuous > T_LIMIT {
                return Ok(None);
            }
            let oracle = brute_force_rounds(&hyper, &partition, &rho, (2.0 * continuous) as u64 + 10)?;
            Ok(Some(rounds.abs_diff(oracle)))
        };
        match run() {
            Ok(Some(d)) => {
                worst = worst.max(d);
                done += 1;
            }
            Ok(None) => {}
            Err(e) => return failed(NAME, TOL, e),
        }
    }
    let (worked, worked_oracle) = match worked_horizon() {
        Ok(v) => v,
        Err(e) => return failed(NAME, TOL, e),
    };
    outcome(
        NAME,
        worst as f64,
        TOL,
        worst <= 1 && worked == 12_500 && worked_oracle == 12_500,
        format!("{instances} instances, max |closed form - oracle|; worked example {worked} (oracle {worked_oracle})"),
    )
}

/// Distances between random simplex points never exceed `sqrt(2)`; two
/// vertices attain it.
pub fn simplex_diameter(seed: u64, pairs: usize) -> CheckOutcome {
    const NAME: &str = "simplex_diameter";
    const TOL: f64 = 1e-12;
    let mut rng = rng_for(seed, 5);
    let mut worst = 0.0f64;
    for n in 0..pairs {
        let k = rng.random_range(1..=12);
        let (a, b) = if n % 10 == 0 {
            // near-vertex points probe the boundary
            let i = rng.random_range(0..k);
            let j = rng.random_range(0..k);
            (SimplexVector::vertex(k, i), random_simplex_sparse(&mut rng, k, j))
        } else {
            (random_simplex(&mut rng, k), random_simplex(&mut rng, k))
        };
        worst = worst.max(a.distance(&b));
    }
    let vertex = SimplexVector::vertex(3, 0).distance(&SimplexVector::vertex(3, 2));
    let excess = worst - std::f64::consts::SQRT_2;
    outcome(
        NAME,
        excess.max(0.0),
        TOL,
        excess <= TOL && vertex == std::f64::consts::SQRT_2,
        format!("{pairs} pairs, max distance {worst:.17}, vertex pair {vertex:.17}"),
    )
}

fn random_simplex_sparse(rng: &mut SimRng, k: usize, heavy: usize) -> SimplexVector {
    let mut v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 1e-9).collect();
    v[heavy] = 1.0;
    let sum: f64 = v.iter().sum();
    SimplexVector::new(v.iter().map(|x| x / sum).collect()).expect("normalized")
}

/// Analytic gradient against central differences,
/// `||g - g_fd|| / ||g_fd||`.
pub fn gradient_check(seed: u64, instances: usize) -> CheckOutcome {
    const NAME: &str = "gradient";
    const TOL: f64 = 1e-5;
    const STEP: f64 = 1e-5;
    let mut rng = rng_for(seed, 6);
    let mut worst = 0.0f64;
    for n in 0..instances {
        let k = rng.random_range(2..=5);
        let inputs = rng.random_range(1..=5);
        let arch = if n % 2 == 0 {
            Architecture::Linear { inputs, classes: k }
        } else {
            let hidden = rng.random_range(1..=4);
            Architecture::Hidden { inputs, hidden, classes: k }
        };
        debug_assert!(arch.num_params() <= 100);
        let samples = rng.random_range(1..=12);
        let features: Vec<f64> = (0..samples * inputs).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let labels: Vec<usize> = (0..samples).map(|_| rng.random_range(0..k)).collect();
        let gamma = rng.random_range(0.0..1.0);
        let targets: Vec<Vec<f64>> = (0..k).map(|_| random_simplex(&mut rng, k).into_inner()).collect();
        let run = |rng: &mut SimRng| -> Result<f64> {
            let data = LabeledDataset::new(features.clone(), inputs, labels.clone(), k)?;
            let params = ModelParams::random(arch, 1.0, rng)?;
            let g = gradient(&params, &data, &targets, gamma)?;
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, gj) in g.iter().enumerate() {
                let shifted = |d: f64| -> Result<f64> {
                    let mut theta = params.theta().to_vec();
                    theta[j] += d;
                    Ok(loss(&ModelParams::from_vec(arch, theta)?, &data, &targets, gamma)?)
                };
                let fd = (shifted(STEP)? - shifted(-STEP)?) / (2.0 * STEP);
                num += (gj - fd) * (gj - fd);
                den += fd * fd;
            }
            Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
        };
        match run(&mut rng) {
            Ok(v) => worst = worst.max(v),
            Err(e) => return failed(NAME, TOL, e),
        }
    }
    outcome(NAME, worst, TOL, worst <= TOL, format!("{instances} models, max relative error"))
}

/// Runs the uplink once: encode, superpose, estimate.
fn uplink(inst: &DesignInstance, design: &TransceiverDesign, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
    let signals = (0..inst.channel.num_devices())
        .map(|i| encode_signal(design, i, inst.channel.coeff(i), &inst.knowledge[i], rng))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let y = ota_aggregate(&signals, &inst.channel, rng)?;
    Ok(estimate_knowledge(&y, design)?)
}

fn noise_free(inst: &DesignInstance, design: &TransceiverDesign) -> Result<(DesignInstance, TransceiverDesign)> {
    let mut quiet = inst.clone();
    quiet.channel = ChannelRealization::new(inst.channel.coeffs().to_vec(), 0.0)?;
    let mut design = design.clone();
    design.clear_dp_noise();
    Ok((quiet, design))
}

/// Without noise the estimate equals the weighted average of local
/// knowledge; with noise it is unbiased.
pub fn estimator(seed: u64, instances: usize, noisy_instances: usize, draws: usize) -> CheckOutcome {
    const NAME: &str = "estimator";
    const TOL: f64 = 1e-12;
    const Z_MAX: f64 = 3.0;
    let mut rng = rng_for(seed, 7);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 20, 6);
        let run = |rng: &mut SimRng| -> Result<f64> {
            let (quiet, design) = noise_free(&inst, &inst.design()?)?;
            let est = uplink(&quiet, &design, rng)?;
            let target = ideal_knowledge(&inst.partition, &inst.knowledge)?;
            Ok(est.iter().flatten().zip(target.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        };
        match run(&mut rng) {
            Ok(v) => worst = worst.max(v),
            Err(e) => return failed(NAME, TOL, e),
        }
    }
    let mut worst_z = 0.0f64;
    for _ in 0..noisy_instances {
        let inst = noisy_instance(&mut rng);
        let run = |rng: &mut SimRng| -> Result<f64> {
            let design = inst.design()?;
            let target: f64 = ideal_knowledge(&inst.partition, &inst.knowledge)?.iter().flatten().sum();
            // one scalar statistic per instance: the summed estimate
            let stats: Vec<f64> = (0..draws)
                .map(|_| uplink(&inst, &design, rng).map(|e| e.iter().flatten().sum::<f64>() - target))
                .collect::<Result<_>>()?;
            let (mean, sd) = crate::experiment::mean_std(&stats);
            Ok((mean / (sd / (draws as f64).sqrt())).abs())
        };
        match run(&mut rng) {
            Ok(z) => worst_z = worst_z.max(z),
            Err(e) => return failed(NAME, TOL, e),
        }
    }
    outcome(
        NAME,
        worst,
        TOL,
        worst <= TOL && worst_z <= Z_MAX,
        format!(
            "{instances} noise-free instances (max abs error); {noisy_instances} noisy instances x {draws} draws, max |z| {worst_z:.2} (limit {Z_MAX})"
        ),
    )
}

/// Small, strongly private instances so that artificial noise is present.
fn noisy_instance(rng: &mut SimRng) -> DesignInstance {
    loop {
        let mut inst = random_instance(rng, 3, 3);
        inst.rounds = rng.random_range(100..5000);
        inst.channel = ChannelRealization::new(inst.channel.coeffs().to_vec(), log_uniform(rng, -10.0, -6.0))
            .expect("valid channel");
        inst.stringencies = (0..inst.channel.num_devices())
            .map(|_| PrivacyStringency::from_rho(log_uniform(rng, -2.0, 1.0)).expect("positive"))
            .collect();
        let design = inst.design().expect("valid instance");
        if (0..inst.classes()).any(|c| matches!(design.regime(c), ClassRegime::DpNoise { .. })) {
            return inst;
        }
    }
}

/// Monte Carlo `E sum_k (B_ik/B_i) ||r_hat^k - r^k||^2` against the closed
/// form of `Phi2`, per device.
pub fn phi2_monte_carlo(seed: u64, designs: usize, draws: usize) -> CheckOutcome {
    const NAME: &str = "phi2_monte_carlo";
    const TOL: f64 = 0.02;
    let mut rng = rng_for(seed, 8);
    let mut worst = 0.0f64;
    for _ in 0..designs {
        let inst = noisy_instance(&mut rng);
        let run = |rng: &mut SimRng| -> Result<f64> {
            let design = inst.design()?;
            let closed = phi2(&design, &inst.channel, &inst.partition, inst.classes())?;
            let (quiet, quiet_design) = noise_free(&inst, &design)?;
            let clean = uplink(&quiet, &quiet_design, rng)?;
            let k = inst.classes();
            let mut class_sq = vec![0.0; k];
            for _ in 0..draws {
                let est = uplink(&inst, &design, rng)?;
                for c in 0..k {
                    class_sq[c] += est[c].iter().zip(&clean[c]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
            }
            let mut rel: f64 = 0.0;
            for (i, &cf) in closed.iter().enumerate() {
                let mc: f64 = (0..k).map(|c| inst.partition.weight(i, c) * class_sq[c] / draws as f64).sum();
                if cf > 0.0 {
                    rel = rel.max((mc - cf).abs() / cf);
                }
            }
            Ok(rel)
        };
        match run(&mut rng) {
            Ok(v) => worst = worst.max(v),
            Err(e) => return failed(NAME, TOL, e),
        }
    }
    outcome(NAME, worst, TOL, worst <= TOL, format!("{designs} designs x {draws} draws, max relative deviation"))
}

/// The whole suite at full size.
pub fn run_all(opts: CheckOptions) -> Vec<CheckOutcome> {
    let s = opts.seed;
    vec![
        simplex_diameter(s, 100_000),
        alignment(s, 1000),
        dp_equality(s, 1000, opts.perturb_lambda),
        power(s, 1000),
        gradient_check(s, 50),
        horizon_oracle(s, 20),
        estimator(s, 200, 5, 10_000),
        phi2_monte_carlo(s, 20, 100_000),
    ]
}
