//! Built-in numerical verification: reverse-mode gradients against central
//! differences, pyramid pooling and metrics against brute-force loops, and
//! the parameter budget of the default network.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{self, ConfusionMatrix};
use crate::model::{build_ainet, count_parameters, pyramid_pool, AINetConfig, ModelState, ParamScope};
use crate::tensor::Tensor;
use crate::train_engine::{loss, loss_and_gradients};

/// Accepted range of the default network's convolution parameter count.
pub const PARAM_BUDGET: (usize, usize) = (440_000, 540_000);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckOptions {
    pub bands: usize,
    pub patch_size: usize,
    pub classes: usize,
    pub batch: usize,
    /// Number of distinct parameter entries compared.
    pub samples: usize,
    /// Initial difference step.
    pub step: f64,
    pub max_refinements: usize,
    pub tolerance: f64,
    /// Entries whose analytic and numeric gradients are both below this
    /// magnitude are compared in absolute terms; it sits above the rounding
    /// noise of a difference quotient at `step`.
    pub floor: f64,
    pub l2_weight: f64,
    pub seed: u64,
    /// Multiplies one analytic gradient entry by `1 + fault`; used to confirm
    /// the check can fail.
    pub fault: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            bands: 16,
            patch_size: 9,
            classes: 3,
            batch: 2,
            samples: 256,
            step: 1e-6,
            max_refinements: 4,
            tolerance: 1e-4,
            floor: 1e-4,
            l2_weight: 1e-5,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    /// Step halvings triggered by unsettled difference quotients.
    pub refined_steps: usize,
    pub passed: bool,
}

fn objective(model: &ModelState<f64>, x: &Tensor<f64>, labels: &[usize], l2: f64) -> Result<f64> {
    let pass = model.forward_train(x.clone())?;
    loss(pass.log_probs(), labels, model, l2)
}

/// Compares reverse-mode gradients of the training objective of a micro
/// network in double precision with central differences.
pub fn gradient_check(options: &GradCheckOptions) -> Result<GradCheckReport> {
    let config = AINetConfig::micro(options.bands, options.classes, options.patch_size);
    let mut model: ModelState<f64> = build_ainet(&config, options.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x9e37_79b9);
    // perturb normalization away from the identity so its gradients are generic
    for (info, v) in model.infos().to_vec().iter().zip(model.values_mut()) {
        if info.kind.is_learnable() && info.kind != crate::model::ParamKind::ConvWeight {
            for x in v.data_mut() {
                *x += rng.random_range(-0.2..0.2);
            }
        }
    }
    let s = options.patch_size;
    let n = options.batch * options.bands * s * s;
    let x = Tensor::from_vec(
        &[options.batch, 1, options.bands, s, s],
        (0..n).map(|_| rng.random::<f64>()).collect(),
    )?;
    let labels: Vec<usize> = (0..options.batch).map(|b| b % options.classes + 1).collect();
    let mut analytic = loss_and_gradients(&model, x.clone(), &labels, options.l2_weight)?.grads;

    // one entry from every learnable array, the rest uniformly over entries
    let learnable: Vec<usize> = (0..model.infos().len())
        .filter(|&i| model.infos()[i].kind.is_learnable())
        .collect();
    let mut picks: Vec<(usize, usize)> = learnable
        .iter()
        .map(|&i| (i, rng.random_range(0..model.values()[i].len())))
        .collect();
    let total: usize = learnable.iter().map(|&i| model.values()[i].len()).sum();
    let extra = options.samples.saturating_sub(picks.len()).min(total);
    for flat in index::sample(&mut rng, total, extra) {
        let mut rem = flat;
        for &i in &learnable {
            let len = model.values()[i].len();
            if rem < len {
                picks.push((i, rem));
                break;
            }
            rem -= len;
        }
    }
    picks.sort_unstable();
    picks.dedup();

    if let Some(f) = options.fault {
        let largest = picks
            .iter()
            .copied()
            .max_by(|&(a, b), &(c, d)| analytic[a].data()[b].abs().total_cmp(&analytic[c].data()[d].abs()));
        if let Some((i, j)) = largest {
            analytic[i].data_mut()[j] *= 1.0 + f;
        }
    }

    let mut worst = (0.0f64, String::new());
    let mut refined = 0;
    for &(i, j) in &picks {
        let orig = model.values()[i].data()[j];
        let mut central = |h: f64| -> Result<f64> {
            model.values_mut()[i].data_mut()[j] = orig + h;
            let up = objective(&model, &x, &labels, options.l2_weight)?;
            model.values_mut()[i].data_mut()[j] = orig - h;
            let down = objective(&model, &x, &labels, options.l2_weight)?;
            model.values_mut()[i].data_mut()[j] = orig;
            Ok((up - down) / (2.0 * h))
        };
        // Halve the step while successive estimates disagree: a rectifier or
        // pooling switch inside [-h, h] shows up as an estimate that does not
        // settle. The analytic value plays no part in this choice.
        let mut h = options.step;
        let mut numeric = central(h)?;
        for _ in 0..options.max_refinements {
            let finer = central(h / 2.0)?;
            let settled =
                (finer - numeric).abs() <= options.tolerance * finer.abs().max(numeric.abs()).max(options.floor);
            h /= 2.0;
            numeric = finer;
            if settled {
                break;
            }
            refined += 1;
        }
        let a = analytic[i].data()[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(options.floor);
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, format!("{}[{j}]", model.infos()[i].name));
        }
    }
    Ok(GradCheckReport {
        checked: picks.len(),
        max_rel_error: worst.0,
        worst_param: worst.1,
        refined_steps: refined,
        passed: worst.0 < options.tolerance,
    })
}

/// Maximum over spectral bins `1..=3` written as plain nested loops; the
/// first `D mod k` bins take one extra slice.
pub fn pyramid_reference(x: &[f64], shape: [usize; 4]) -> Vec<f64> {
    let [ch, d, h, w] = shape;
    let mut out = Vec::with_capacity(ch * 6);
    for k in 1..=3 {
        for c in 0..ch {
            let mut start = 0;
            for bin in 0..k {
                let len = d / k + usize::from(bin < d % k);
                let mut m = f64::NEG_INFINITY;
                for z in start..start + len {
                    for i in 0..h * w {
                        m = m.max(x[(c * d + z) * h * w + i]);
                    }
                }
                out.push(m);
                start += len;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check_pyramid(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let shape = [
            rng.random_range(1..=8),
            rng.random_range(3..=15),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        ];
        let n = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = pyramid_pool(&Tensor::from_vec(&shape, data.clone())?, &[1, 2, 3])?;
        let want = pyramid_reference(&data, shape);
        if got.len() != want.len() {
            worst = f64::INFINITY;
            break;
        }
        worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok(CheckResult {
        name: "pyramid pooling vs loop reference (200 random maps)".into(),
        passed: worst == 0.0,
        detail: format!("max abs difference {worst:e}"),
    })
}

/// Naive OA, AA and kappa straight from their definitions.
pub fn metrics_reference(m: &[Vec<u64>]) -> (f64, f64, f64) {
    let c = m.len();
    let n: f64 = m.iter().flatten().map(|&v| v as f64).sum();
    let oa = (0..c).map(|i| m[i][i] as f64).sum::<f64>() / n;
    let mut recalls = Vec::new();
    let mut pe = 0.0;
    for (i, r) in m.iter().enumerate() {
        let row: f64 = r.iter().map(|&v| v as f64).sum();
        let col: f64 = m.iter().map(|k| k[i] as f64).sum();
        if row > 0.0 {
            recalls.push(r[i] as f64 / row);
        }
        pe += (row / n) * (col / n);
    }
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    (oa, aa, (oa - pe) / (1.0 - pe))
}

fn check_metrics(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hand = ConfusionMatrix::from_rows(&[vec![30, 20], vec![10, 40]])?;
    let hand_ok = (metrics::overall_accuracy(&hand)? - 0.70).abs() < 1e-12
        && (metrics::average_accuracy(&hand)? - 0.70).abs() < 1e-12
        && (metrics::kappa(&hand)? - 0.40).abs() < 1e-12;
    let mut worst = 0.0f64;
    let mut compared = 0;
    while compared < 1000 {
        let c = rng.random_range(2..=20);
        let m: Vec<Vec<u64>> = (0..c)
            .map(|_| (0..c).map(|_| rng.random_range(0..100)).collect())
            .collect();
        let cm = ConfusionMatrix::from_rows(&m)?;
        let (oa, aa, k) = metrics_reference(&m);
        let Ok(kappa) = metrics::kappa(&cm) else { continue };
        for (got, want) in [
            (metrics::overall_accuracy(&cm)?, oa),
            (metrics::average_accuracy(&cm)?, aa),
            (kappa, k),
        ] {
            worst = worst.max((got - want).abs());
        }
        compared += 1;
    }
    Ok(CheckResult {
        name: "OA/AA/kappa vs loop reference (1000 random matrices + 2x2 hand case)".into(),
        passed: hand_ok && worst < 1e-12,
        detail: format!(
            "hand case {}, max abs difference {worst:e}",
            if hand_ok { "ok" } else { "WRONG" }
        ),
    })
}

fn check_param_count() -> Result<CheckResult> {
    let model: ModelState<f32> = build_ainet(&AINetConfig::standard(103, 9), 0)?;
    let n = count_parameters(&model, ParamScope::ConvOnly);
    Ok(CheckResult {
        name: "default network convolution parameter budget".into(),
        passed: (PARAM_BUDGET.0..=PARAM_BUDGET.1).contains(&n),
        detail: format!("{n} in [{}, {}]", PARAM_BUDGET.0, PARAM_BUDGET.1),
    })
}

fn check_log_softmax(seed: u64) -> Result<CheckResult> {
    let config = AINetConfig::micro(16, 5, 9);
    let model: ModelState<f64> = build_ainet(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 8 * 16 * 81;
    let x = Tensor::from_vec(&[8, 1, 16, 9, 9], (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())?;
    let out = model.forward(&x)?;
    let worst = out
        .data()
        .chunks(5)
        .map(|r| r.iter().map(|v| v.exp()).sum::<f64>().ln().abs())
        .fold(0.0, f64::max);
    Ok(CheckResult {
        name: "log-softmax rows normalize".into(),
        passed: worst < 1e-5,
        detail: format!("max |logsumexp| {worst:e}"),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfcheckOptions {
    pub seed: u64,
    pub grad: GradCheckOptions,
}

pub fn run_selfcheck(options: &SelfcheckOptions) -> Result<SelfcheckReport> {
    let grad = gradient_check(&options.grad)?;
    let checks = vec![
        CheckResult {
            name: format!("gradient check, micro network, {} entries", grad.checked),
            passed: grad.passed,
            detail: format!(
                "max relative error {:e} at {} (tolerance {:e})",
                grad.max_rel_error, grad.worst_param, options.grad.tolerance
            ),
        },
        check_pyramid(options.seed)?,
        check_metrics(options.seed)?,
        check_param_count()?,
        check_log_softmax(options.seed)?,
    ];
    Ok(SelfcheckReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_agree_with_differences() {
        let report = gradient_check(&GradCheckOptions::default()).unwrap();
        assert!(report.checked >= 200);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn injected_fault_is_caught() {
        let opts = GradCheckOptions {
            samples: 10,
            fault: Some(0.01),
            ..Default::default()
        };
        assert!(!gradient_check(&opts).unwrap().passed);
    }

    #[test]
    fn full_suite_passes() {
        let report = run_selfcheck(&SelfcheckOptions {
            grad: GradCheckOptions {
                samples: 20,
                ..Default::default()
            },
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed(), "{report:#?}");
    }
}
