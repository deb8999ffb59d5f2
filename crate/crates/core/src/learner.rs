//! Local model: a softmax classifier trained on cross-entropy plus the
//! squared distance between its soft prediction and the broadcast
//! distillation target of the sample's class,
//!
//! ```text
//! F(theta) = 1/B sum_b [ -ln G(u_b)[v_b] + gamma || G(u_b) - r^{v_b} ||^2 ].
//! ```
//!
//! The model is either linear-softmax or has one `tanh` hidden layer.
//! Gradients are analytic; targets may leave the simplex (they carry
//! channel and privacy noise) and are used as received.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::simplex::SimplexVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Architecture {
    Linear { inputs: usize, classes: usize },
    Hidden { inputs: usize, hidden: usize, classes: usize },
}

impl Architecture {
    pub fn inputs(&self) -> usize {
        match *self {
            Architecture::Linear { inputs, .. } | Architecture::Hidden { inputs, .. } => inputs,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::Linear { classes, .. } | Architecture::Hidden { classes, .. } => classes,
        }
    }

    /// Parameter count `D`.
    pub fn num_params(&self) -> usize {
        match *self {
            Architecture::Linear { inputs, classes } => classes * (inputs + 1),
            Architecture::Hidden { inputs, hidden, classes } => hidden * (inputs + 1) + classes * (hidden + 1),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Architecture::Linear { inputs, classes } => inputs > 0 && classes > 0,
            Architecture::Hidden { inputs, hidden, classes } => inputs > 0 && hidden > 0 && classes > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain("architecture dimensions must be positive"))
        }
    }
}

/// Flat parameter vector. Linear layout: `W (classes x inputs)` row-major,
/// then the bias. Hidden layout: `W1, b1, W2, b2`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    arch: Architecture,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(ModelParams { arch, theta: vec![0.0; arch.num_params()] })
    }

    /// Entries drawn i.i.d. from `N(0, scale^2)`.
    pub fn random<R: Rng + ?Sized>(arch: Architecture, scale: f64, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let theta = (0..arch.num_params()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(ModelParams { arch, theta })
    }

    pub fn from_vec(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: arch.num_params(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("parameters must be finite"));
        }
        Ok(ModelParams { arch, theta })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Logits for one input; `hidden` receives the hidden activations.
    fn logits(&self, x: &[f64], hidden: &mut Vec<f64>) -> Vec<f64> {
        match self.arch {
            Architecture::Linear { inputs, classes } => {
                let (w, b) = self.theta.split_at(classes * inputs);
                affine(w, b, x)
            }
            Architecture::Hidden { inputs, hidden: h, classes } => {
                let (w1, rest) = self.theta.split_at(h * inputs);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(classes * h);
                *hidden = affine(w1, b1, x).into_iter().map(libm::tanh).collect();
                affine(w2, b2, hidden)
            }
        }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .zip(w.chunks_exact(x.len()))
        .map(|(bias, row)| bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| libm::exp(v - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(z)[label]`, computed without forming the probabilities.
fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(z.iter().map(|v| libm::exp(v - max)).sum::<f64>());
    lse - z[label]
}

fn check_input(params: &ModelParams, input: &[f64]) -> Result<()> {
    if input.len() != params.arch.inputs() {
        return Err(Error::DimensionMismatch {
            what: "model input",
            expected: params.arch.inputs(),
            found: input.len(),
        });
    }
    Ok(())
}

/// Soft prediction `G_theta(u)`.
pub fn forward(params: &ModelParams, input: &[f64]) -> Result<SimplexVector> {
    check_input(params, input)?;
    let mut hidden = Vec::new();
    Ok(SimplexVector::from_raw(softmax(&params.logits(input, &mut hidden))))
}

fn check_batch(params: &ModelParams, data: &LabeledDataset, distilled: &[Vec<f64>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let k = params.arch.classes();
    if data.num_classes() != k {
        return Err(Error::DimensionMismatch { what: "dataset classes", expected: k, found: data.num_classes() });
    }
    if data.dims() != params.arch.inputs() {
        return Err(Error::DimensionMismatch {
            what: "dataset dims",
            expected: params.arch.inputs(),
            found: data.dims(),
        });
    }
    if distilled.len() != k {
        return Err(Error::DimensionMismatch { what: "distilled targets", expected: k, found: distilled.len() });
    }
    if let Some(t) = distilled.iter().find(|t| t.len() != k) {
        return Err(Error::DimensionMismatch { what: "distilled target length", expected: k, found: t.len() });
    }
    Ok(())
}

/// Mean local loss over `data` with per-class targets `distilled`.
pub fn loss(params: &ModelParams, data: &LabeledDataset, distilled: &[Vec<f64>], gamma: f64) -> Result<f64> {
    check_batch(params, data, distilled)?;
    let mut hidden = Vec::new();
    let total: f64 = data
        .iter()
        .map(|(x, y)| {
            let z = params.logits(x, &mut hidden);
            let p = softmax(&z);
            let dist: f64 = p.iter().zip(&distilled[y]).map(|(a, b)| (a - b) * (a - b)).sum();
            cross_entropy(&z, y) + gamma * dist
        })
        .sum();
    Ok(total / data.len() as f64)
}

pub fn gradient(params: &ModelParams, data: &LabeledDataset, distilled: &[Vec<f64>], gamma: f64) -> Result<Vec<f64>> {
    loss_and_gradient(params, data, distilled, gamma).map(|(_, g)| g)
}

/// Loss and its gradient in one pass.
///
/// Per sample the logit gradient is `(p - e_y) + 2 gamma J (p - r)` with the
/// softmax Jacobian `J = diag(p) - p p^T`.
pub fn loss_and_gradient(
    params: &ModelParams,
    data: &LabeledDataset,
    distilled: &[Vec<f64>],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    check_batch(params, data, distilled)?;
    let mut grad = vec![0.0; params.dim()];
    let mut hidden = Vec::new();
    let mut total = 0.0;
    for (x, y) in data.iter() {
        let z = params.logits(x, &mut hidden);
        let p = softmax(&z);
        let diff: Vec<f64> = p.iter().zip(&distilled[y]).map(|(a, b)| a - b).collect();
        total += cross_entropy(&z, y) + gamma * diff.iter().map(|d| d * d).sum::<f64>();
        let p_dot_diff: f64 = p.iter().zip(&diff).map(|(a, b)| a * b).sum();
        let dz: Vec<f64> = (0..p.len())
            .map(|c| {
                let ce = p[c] - if c == y { 1.0 } else { 0.0 };
                ce + 2.0 * gamma * p[c] * (diff[c] - p_dot_diff)
            })
            .collect();
        backprop(params, x, &hidden, &dz, &mut grad);
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

fn backprop(params: &ModelParams, x: &[f64], hidden: &[f64], dz: &[f64], grad: &mut [f64]) {
    match params.arch {
        Architecture::Linear { inputs, classes } => {
            let (gw, gb) = grad.split_at_mut(classes * inputs);
            outer_acc(gw, gb, dz, x);
        }
        Architecture::Hidden { inputs, hidden: h, classes } => {
            let w2 = &params.theta[h * (inputs + 1)..h * (inputs + 1) + classes * h];
            let (g1, g2) = grad.split_at_mut(h * (inputs + 1));
            let (gw2, gb2) = g2.split_at_mut(classes * h);
            outer_acc(gw2, gb2, dz, hidden);
            let dpre: Vec<f64> = (0..h)
                .map(|j| {
                    let back: f64 = (0..classes).map(|c| w2[c * h + j] * dz[c]).sum();
                    back * (1.0 - hidden[j] * hidden[j])
                })
                .collect();
            let (gw1, gb1) = g1.split_at_mut(h * inputs);
            outer_acc(gw1, gb1, &dpre, x);
        }
    }
}

fn outer_acc(gw: &mut [f64], gb: &mut [f64], delta: &[f64], input: &[f64]) {
    for ((row, b), &d) in gw.chunks_exact_mut(input.len()).zip(gb.iter_mut()).zip(delta) {
        *b += d;
        for (w, &xv) in row.iter_mut().zip(input) {
            *w += d * xv;
        }
    }
}

/// `eta_t = eta0 / sqrt(t)` for rounds `t >= 1`.
pub fn learning_rate(t: u64, eta0: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::domain("rounds are 1-indexed"));
    }
    Ok(eta0 / libm::sqrt(t as f64))
}

/// `theta - eta_t grad`.
pub fn sgd_step(params: &ModelParams, grad: &[f64], t: u64, eta0: f64) -> Result<ModelParams> {
    if grad.len() != params.dim() {
        return Err(Error::DimensionMismatch { what: "gradient", expected: params.dim(), found: grad.len() });
    }
    let eta = learning_rate(t, eta0)?;
    Ok(ModelParams { arch: params.arch, theta: params.theta.iter().zip(grad).map(|(w, g)| w - eta * g).collect() })
}

/// Fraction of samples whose arg-max prediction matches the label.
pub fn evaluate(params: &ModelParams, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut correct = 0usize;
    for (x, y) in test.iter() {
        if forward(params, x)?.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn dataset(rows: &[(&[f64], usize)], k: usize) -> LabeledDataset {
        let dims = rows[0].0.len();
        LabeledDataset::new(
            rows.iter().flat_map(|(x, _)| x.iter().copied()).collect(),
            dims,
            rows.iter().map(|(_, y)| *y).collect(),
            k,
        )
        .unwrap()
    }

    fn random_dataset<R: Rng>(rng: &mut R, n: usize, dims: usize, k: usize) -> LabeledDataset {
        let features = (0..n * dims).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        LabeledDataset::new(features, dims, labels, k).unwrap()
    }

    fn random_targets<R: Rng>(rng: &mut R, k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..k).map(|_| rng.random_range(-0.5..1.5)).collect()).collect()
    }

    #[test]
    fn zero_weights_uniform() {
        let p = ModelParams::zeros(Architecture::Linear { inputs: 3, classes: 4 }).unwrap();
        let out = forward(&p, &[1.0, -2.0, 0.5]).unwrap();
        assert!(out.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn forward_on_simplex_and_shift_invariant() {
        let mut rng = stream(1, Stream::Init, &[]);
        let arch = Architecture::Linear { inputs: 4, classes: 5 };
        let p = ModelParams::random(arch, 3.0, &mut rng).unwrap();
        let x = [0.3, -1.0, 2.0, 0.7];
        let out = forward(&p, &x).unwrap();
        assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // adding c to every bias adds c to every logit
        let mut shifted = p.theta().to_vec();
        let n = shifted.len();
        shifted[n - 5..].iter_mut().for_each(|b| *b += 17.0);
        let out2 = forward(&ModelParams::from_vec(arch, shifted).unwrap(), &x).unwrap();
        for (a, b) in out.as_slice().iter().zip(out2.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(forward(&p, &x[..3]).is_err());
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let mut rng = stream(2, Stream::Init, &[]);
        let arch = Architecture::Linear { inputs: 2, classes: 3 };
        let p = ModelParams::random(arch, 1.0, &mut rng).unwrap();
        let data = random_dataset(&mut rng, 20, 2, 3);
        let targets = random_targets(&mut rng, 3);
        let mut ce = 0.0;
        for (x, y) in data.iter() {
            ce -= libm::log(forward(&p, x).unwrap().as_slice()[y]);
        }
        ce /= 20.0;
        assert!((loss(&p, &data, &targets, 0.0).unwrap() - ce).abs() < 1e-12);
    }

    #[test]
    fn loss_near_zero_when_confident_and_matched() {
        // logits 40 * one-hot: prediction is one-hot up to e^-40
        let arch = Architecture::Linear { inputs: 1, classes: 2 };
        let p = ModelParams::from_vec(arch, vec![0.0, 0.0, 20.0, -20.0]).unwrap();
        let data = dataset(&[(&[1.0], 0), (&[2.0], 0)], 2);
        let targets = vec![forward(&p, &[1.0]).unwrap().into_inner(), vec![0.0, 1.0]];
        let v = loss(&p, &data, &targets, 5.0).unwrap();
        assert!((0.0..1e-15).contains(&v), "{v}");
    }

    #[test]
    fn loss_matches_sample_by_sample() {
        let mut rng = stream(3, Stream::Init, &[]);
        let arch = Architecture::Hidden { inputs: 3, hidden: 4, classes: 3 };
        let p = ModelParams::random(arch, 0.8, &mut rng).unwrap();
        let data = random_dataset(&mut rng, 25, 3, 3);
        let targets = random_targets(&mut rng, 3);
        let gamma = 0.7;
        let mut slow = 0.0;
        for i in 0..data.len() {
            let (x, y) = (data.features(i), data.label(i));
            let g = forward(&p, x).unwrap();
            let ce = -libm::log(g.as_slice()[y]);
            let d: f64 = g.as_slice().iter().zip(&targets[y]).map(|(a, b)| (a - b) * (a - b)).sum();
            slow += ce + gamma * d;
        }
        slow /= data.len() as f64;
        let fast = loss(&p, &data, &targets, gamma).unwrap();
        assert!((fast - slow).abs() <= 1e-12 * slow);
    }

    #[test]
    fn single_sample_textbook_gradient() {
        let arch = Architecture::Linear { inputs: 2, classes: 3 };
        let theta = vec![0.1, -0.2, 0.3, 0.0, -0.4, 0.5, 0.05, -0.05, 0.2];
        let p = ModelParams::from_vec(arch, theta).unwrap();
        let x = [1.5, -0.5];
        let data = dataset(&[(&x, 2)], 3);
        let g = gradient(&p, &data, &[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]], 0.0).unwrap();
        let probs = forward(&p, &x).unwrap().into_inner();
        for c in 0..3 {
            let delta = probs[c] - if c == 2 { 1.0 } else { 0.0 };
            assert!((g[c * 2] - delta * x[0]).abs() < 1e-15);
            assert!((g[c * 2 + 1] - delta * x[1]).abs() < 1e-15);
            assert!((g[6 + c] - delta).abs() < 1e-15);
        }
    }

    #[test]
    fn distillation_term_vanishes_on_own_prediction() {
        let mut rng = stream(4, Stream::Init, &[]);
        let arch = Architecture::Linear { inputs: 2, classes: 3 };
        let p = ModelParams::random(arch, 1.0, &mut rng).unwrap();
        // every sample of a class shares one input, so its prediction is the target
        let data = dataset(&[(&[1.0, 2.0], 0), (&[1.0, 2.0], 0), (&[-1.0, 0.5], 1), (&[0.2, -3.0], 2)], 3);
        let targets: Vec<Vec<f64>> =
            [[1.0, 2.0], [-1.0, 0.5], [0.2, -3.0]].iter().map(|x| forward(&p, x).unwrap().into_inner()).collect();
        let with = gradient(&p, &data, &targets, 3.0).unwrap();
        let without = gradient(&p, &data, &targets, 0.0).unwrap();
        for (a, b) in with.iter().zip(&without) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn finite_difference_check(arch: Architecture, seed: u64) -> f64 {
        let mut rng = stream(seed, Stream::Init, &[]);
        let k = arch.classes();
        let p = ModelParams::random(arch, 0.7, &mut rng).unwrap();
        let data = random_dataset(&mut rng, 12, arch.inputs(), k);
        let targets = random_targets(&mut rng, k);
        let gamma = rng.random_range(0.0..2.0);
        let g = gradient(&p, &data, &targets, gamma).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.dim() {
            let mut plus = p.theta().to_vec();
            let mut minus = p.theta().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fp = loss(&ModelParams::from_vec(arch, plus).unwrap(), &data, &targets, gamma).unwrap();
            let fm = loss(&ModelParams::from_vec(arch, minus).unwrap(), &data, &targets, gamma).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let lin = finite_difference_check(Architecture::Linear { inputs: 3, classes: 3 }, seed);
            assert!(lin <= 1e-5, "linear seed {seed}: {lin}");
            let hid = finite_difference_check(Architecture::Hidden { inputs: 3, hidden: 4, classes: 3 }, 100 + seed);
            assert!(hid <= 1e-5, "hidden seed {seed}: {hid}");
        }
    }

    #[test]
    fn learning_rate_schedule() {
        assert_eq!(learning_rate(1, 0.3).unwrap(), 0.3);
        assert_eq!(learning_rate(4, 0.3).unwrap(), 0.15);
        assert!((learning_rate(100, 0.01).unwrap() - 0.001).abs() < 1e-18);
        assert!(learning_rate(0, 0.01).is_err());
    }

    #[test]
    fn sgd_step_arithmetic() {
        let arch = Architecture::Linear { inputs: 1, classes: 1 };
        let p = ModelParams::from_vec(arch, vec![2.0, -1.0]).unwrap();
        assert_eq!(sgd_step(&p, &[0.0, 0.0], 3, 0.1).unwrap(), p);
        // t = 4 -> eta = 0.05; gradient of (w - 1)^2 at w = 2 is 2
        let q = sgd_step(&p, &[2.0, 0.0], 4, 0.1).unwrap();
        assert_eq!(q.theta(), &[1.9, -1.0]);
        assert!(sgd_step(&p, &[1.0], 1, 0.1).is_err());
    }

    #[test]
    fn descent_on_logistic_toy() {
        let data = dataset(&[(&[1.0, 0.2], 0), (&[0.8, -0.1], 0), (&[-1.0, 0.3], 1), (&[-0.7, -0.4], 1)], 2);
        let arch = Architecture::Linear { inputs: 2, classes: 2 };
        let targets = vec![vec![0.5; 2], vec![0.5; 2]];
        let mut p = ModelParams::zeros(arch).unwrap();
        let mut last = loss(&p, &data, &targets, 0.0).unwrap();
        for t in 1..=50 {
            let g = gradient(&p, &data, &targets, 0.0).unwrap();
            p = sgd_step(&p, &g, t, 0.1).unwrap();
            let now = loss(&p, &data, &targets, 0.0).unwrap();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn evaluate_tie_break_and_memorization() {
        let zero = ModelParams::zeros(Architecture::Linear { inputs: 1, classes: 2 }).unwrap();
        let balanced = dataset(&[(&[1.0], 0), (&[2.0], 1), (&[3.0], 0), (&[4.0], 1)], 2);
        assert_eq!(evaluate(&zero, &balanced).unwrap(), 0.5);
        let skewed = dataset(&[(&[1.0], 0), (&[2.0], 0), (&[3.0], 0), (&[4.0], 1)], 2);
        assert_eq!(evaluate(&zero, &skewed).unwrap(), 0.75);

        let sep = dataset(&[(&[1.0], 0), (&[-1.0], 1)], 2);
        let fit =
            ModelParams::from_vec(Architecture::Linear { inputs: 1, classes: 2 }, vec![5.0, -5.0, 0.0, 0.0]).unwrap();
        assert_eq!(evaluate(&fit, &sep).unwrap(), 1.0);
        let empty = LabeledDataset::new(vec![], 1, vec![], 2).unwrap();
        assert!(evaluate(&fit, &empty).is_err());
    }

    #[test]
    fn random_weights_are_at_chance() {
        let mut rng = stream(5, Stream::Init, &[]);
        let k = 10;
        let data = random_dataset(&mut rng, 5000, 4, k);
        let mut acc = 0.0;
        let reps = 20;
        for _ in 0..reps {
            let p = ModelParams::random(Architecture::Linear { inputs: 4, classes: k }, 1.0, &mut rng).unwrap();
            acc += evaluate(&p, &data).unwrap();
        }
        acc /= reps as f64;
        assert!((acc - 0.1).abs() < 0.03, "{acc}");
    }
}
