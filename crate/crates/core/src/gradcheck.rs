//! Finite-difference verification of every layer's analytic gradients in
//! 64-bit arithmetic.
//!
//! The scalar probed is `L = sum(r * f(x))` for a fixed random `r`, so the
//! upstream gradient is `r`. Probes whose perturbation flips any ReLU
//! activation are skipped, since the derivative is undefined across a kink.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::contrastive::{batch_loss_and_grad, Embeddings};
use crate::error::Result;
use crate::nn::{BatchNorm2d, Conv2d, Dense, Encoder, EncoderSpec, GlobalAvgPool, HeadSpec, KinkSignature, Mode, Module, Network, NetworkSpec, Relu, ResidualBlock};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Coordinates probed per tensor (all when the tensor is smaller).
    pub probes: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-4, floor: 1e-5, probes: 12, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
    pub worst: String,
    pub passed: bool,
}

fn normal(rng: &mut Stream) -> f64 {
    rng.sample(StandardNormal)
}

fn random_tensor(shape: &[usize], rng: &mut Stream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| normal(rng))
}

/// Shift every parameter by Gaussian noise so that default values such as
/// unit batch-norm scales do not hide errors.
pub fn jitter_params(module: &mut dyn Module<f64>, scale: f64, rng: &mut Stream) {
    module.visit_params("", &mut |_, p| p.data_mut().iter_mut().for_each(|v| *v += scale * normal(rng)));
}

fn signature(module: &dyn Module<f64>) -> KinkSignature {
    let mut sig = KinkSignature::default();
    module.kink_signature(&mut sig);
    sig
}

fn probe_indices(n: usize, probes: usize, rng: &mut Stream) -> Vec<usize> {
    if n <= probes {
        (0..n).collect()
    } else {
        (0..probes).map(|_| rng.random_range(0..n)).collect()
    }
}

fn objective(module: &mut dyn Module<f64>, x: &Tensor<f64>, r: &Tensor<f64>, mode: Mode) -> Result<(f64, KinkSignature)> {
    let y = module.forward(x, mode)?;
    let loss = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    Ok((loss, signature(module)))
}

struct Tally {
    report: GradCheckReport,
    config: GradCheckConfig,
}

impl Tally {
    fn new(name: &str, config: GradCheckConfig) -> Self {
        Self { report: GradCheckReport { name: name.into(), checked: 0, skipped: 0, max_relative_error: 0.0, worst: String::new(), passed: true }, config }
    }

    fn record(&mut self, what: &str, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(self.config.floor);
        let err = (analytic - numeric).abs() / denom;
        self.report.checked += 1;
        if !(err <= self.report.max_relative_error) {
            self.report.max_relative_error = err;
            self.report.worst = format!("{what}: analytic {analytic:e}, numeric {numeric:e}");
        }
    }

    fn finish(mut self) -> GradCheckReport {
        self.report.passed = self.report.checked > 0 && self.report.max_relative_error < self.config.tolerance;
        self.report
    }
}

/// Check input and parameter gradients of `module` at `input`.
pub fn check_module(name: &str, module: &mut dyn Module<f64>, input: &Tensor<f64>, mode: Mode, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = stream(config.seed, "gradcheck-probe", &[]);
    let y = module.forward(input, mode)?;
    let r = random_tensor(y.shape(), &mut rng);
    let base_sig = signature(module);
    module.zero_grad();
    let dx = module.backward(&r)?;
    let mut analytic_params: Vec<(String, Vec<f64>)> = Vec::new();
    module.visit_params("", &mut |n, p| analytic_params.push((n.into(), p.grad().map(|g| g.to_vec()).unwrap_or_else(|| alloc::vec![0.0; p.numel()]))));
    let h = config.step;
    let mut tally = Tally::new(name, *config);

    let mut x = input.clone();
    for i in probe_indices(x.numel(), config.probes, &mut rng) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let (lp, sp) = objective(module, &x, &r, mode)?;
        x.data_mut()[i] = orig - h;
        let (lm, sm) = objective(module, &x, &r, mode)?;
        x.data_mut()[i] = orig;
        if sp != base_sig || sm != base_sig {
            tally.report.skipped += 1;
            continue;
        }
        tally.record(&format!("input[{i}]"), dx.data()[i], (lp - lm) / (2.0 * h));
    }

    for (t, (pname, grad)) in analytic_params.iter().enumerate() {
        for i in probe_indices(grad.len(), config.probes, &mut rng) {
            let set = |delta: f64, module: &mut dyn Module<f64>| {
                let mut k = 0;
                module.visit_params("", &mut |_, p| {
                    if k == t {
                        p.data_mut()[i] += delta;
                    }
                    k += 1;
                });
            };
            set(h, module);
            let (lp, sp) = objective(module, input, &r, mode)?;
            set(-2.0 * h, module);
            let (lm, sm) = objective(module, input, &r, mode)?;
            set(h, module);
            if sp != base_sig || sm != base_sig {
                tally.report.skipped += 1;
                continue;
            }
            tally.record(&format!("{pname}[{i}]"), grad[i], (lp - lm) / (2.0 * h));
        }
    }
    Ok(tally.finish())
}

/// Check the gradient of the contrastive batch loss with respect to every
/// embedding coordinate.
pub fn check_contrastive(z: &Embeddings, tau: f64, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let (_, grad) = batch_loss_and_grad(z, tau)?;
    let mut tally = Tally::new("contrastive loss", *config);
    let mut zz = z.clone();
    for i in 0..z.values.len() {
        let orig = zz.values[i];
        zz.values[i] = orig + config.step;
        let (lp, _) = batch_loss_and_grad(&zz, tau)?;
        zz.values[i] = orig - config.step;
        let (lm, _) = batch_loss_and_grad(&zz, tau)?;
        zz.values[i] = orig;
        tally.record(&format!("z[{i}]"), grad[i], (lp - lm) / (2.0 * config.step));
    }
    Ok(tally.finish())
}

/// Every layer type, a residual block with and without projection
/// shortcut, the default encoder, both heads and the contrastive loss.
pub fn run_suite(config: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut rng = stream(config.seed, "gradcheck-setup", &[]);
    let mut out = Vec::new();
    let mut run = |name: &str, module: &mut dyn Module<f64>, shape: &[usize], mode: Mode, rng: &mut Stream| -> Result<()> {
        jitter_params(module, 0.2, rng);
        let x = random_tensor(shape, rng);
        out.push(check_module(name, module, &x, mode, config)?);
        Ok(())
    };

    run("conv2d 3x3 stride 1", &mut Conv2d::<f64>::new(3, 4, 3, 1, 1, &mut rng), &[2, 3, 6, 6], Mode::Train, &mut rng)?;
    run("conv2d 3x3 stride 2", &mut Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng), &[2, 2, 7, 7], Mode::Train, &mut rng)?;
    run("conv2d 1x1 stride 2", &mut Conv2d::<f64>::new(2, 3, 1, 2, 0, &mut rng), &[2, 2, 6, 6], Mode::Train, &mut rng)?;
    run("batchnorm train 4d", &mut BatchNorm2d::<f64>::new(3), &[4, 3, 3, 3], Mode::Train, &mut rng)?;
    run("batchnorm train 2d", &mut BatchNorm2d::<f64>::new(5), &[6, 5], Mode::Train, &mut rng)?;
    let mut bn = BatchNorm2d::<f64>::new(3);
    bn.running_mean = random_tensor(&[3], &mut rng);
    bn.running_var = Tensor::from_fn(&[3], |_| 0.5 + rng.random::<f64>());
    run("batchnorm eval", &mut bn, &[2, 3, 4, 4], Mode::Eval, &mut rng)?;
    run("relu", &mut Relu::new(), &[3, 7], Mode::Train, &mut rng)?;
    run("global average pool", &mut GlobalAvgPool::new(), &[2, 3, 4, 5], Mode::Train, &mut rng)?;
    run("dense", &mut Dense::<f64>::new(6, 4, &mut rng), &[3, 6], Mode::Train, &mut rng)?;
    run("residual block identity shortcut", &mut ResidualBlock::<f64>::new(3, 3, 1, &mut rng), &[2, 3, 6, 6], Mode::Train, &mut rng)?;
    run("residual block projection shortcut", &mut ResidualBlock::<f64>::new(2, 4, 2, &mut rng), &[2, 2, 6, 6], Mode::Train, &mut rng)?;
    run("encoder", &mut Encoder::<f64>::new(&EncoderSpec::default(), &mut rng)?, &[2, 1, 16, 16], Mode::Train, &mut rng)?;
    let small = EncoderSpec { stem_channels: 4, widths: alloc::vec![4, 8], strides: alloc::vec![1, 2], ..EncoderSpec::default() };
    run(
        "pretraining network",
        &mut Network::<f64>::new(&NetworkSpec { encoder: small.clone(), head: HeadSpec::ProjectionMlp { hidden: 16, output: 8 } }, config.seed)?,
        &[3, 1, 12, 12],
        Mode::Train,
        &mut rng,
    )?;
    run("classification network", &mut Network::<f64>::new(&NetworkSpec { encoder: small, head: HeadSpec::classifier() }, config.seed)?, &[3, 1, 12, 12], Mode::Train, &mut rng)?;

    let z = Embeddings::new(6, 5, (0..30).map(|_| normal(&mut rng)).collect())?;
    out.push(check_contrastive(&z, 0.5, config)?);
    Ok(out)
}
