//! Training loops for the base, appearance-simulation, and refinement
//! networks. All randomness comes from named sub-streams of the master seed,
//! and every stage logs per-step losses as JSON lines.

use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde_json::json;

use super::augment::{apply_transform_mask, apply_transform_tensor, sample_transform};
use super::config::{AblationMode, ExperimentConfig};
use super::dataset::CaseData;
use super::infer::window_origins;
use super::sampling::{extract_patch_mask, extract_patch_volume, random_offset};
use crate::error::{Error, Result};
use crate::model::{
    adam_step, backward, dice_loss, dice_loss_backward, discriminator_spec, forward, init_params,
    unet_spec, AdvLosses, ModelParams, ModelSpec, OptimizerState, Tensor,
};
use crate::rng::{sub_rng, Rng};
use crate::volume::{BinaryMask, Volume};

/// JSONL sink for per-step losses.
pub struct RunLogger {
    out: Option<std::io::BufWriter<std::fs::File>>,
}

impl RunLogger {
    pub fn to_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(RunLogger { out: Some(std::io::BufWriter::new(std::fs::File::create(path)?)) })
    }

    pub fn disabled() -> Self {
        RunLogger { out: None }
    }

    pub fn log(&mut self, value: serde_json::Value) {
        if let Some(out) = &mut self.out {
            // serde_json maps are sorted, so lines are byte-stable
            let _ = writeln!(out, "{value}");
        }
    }

    pub fn flush(&mut self) {
        if let Some(out) = &mut self.out {
            let _ = out.flush();
        }
    }
}

/// A trained network plus its selection metadata.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: ModelParams<f32>,
    /// Masked Dice loss of the selected checkpoint on the validation split.
    pub best_val_loss: Option<f64>,
    /// (from initial, from synthetic) refinement label-channel counts.
    pub label_sources: Option<(usize, usize)>,
}

fn patch_triple(
    case: &CaseData,
    offset: [usize; 3],
    patch: usize,
    pad_intensity: f32,
) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
    let img = extract_patch_volume(&case.sample.image, offset, patch, pad_intensity);
    let g = extract_patch_mask(&case.sample.gt_mask, offset, patch);
    let mask = extract_patch_mask(&case.sample.bounding_mask, offset, patch);
    (img, g, mask)
}

fn mask_is_empty(mask: &Tensor<f32>) -> bool {
    mask.data.iter().all(|&v| v <= 0.5)
}

/// Mean masked Dice loss over a deterministic non-overlapping tiling of the
/// validation cases. The label channel, when present, is the case's initial
/// segmentation so validation matches the inference condition.
fn validate(
    spec: &ModelSpec,
    params: &ModelParams<f32>,
    cases: &[CaseData],
    label_channel: Option<&[BinaryMask]>,
    patch: usize,
    pad_intensity: f32,
) -> Result<f64> {
    let mut total = 0.0;
    let mut tiles = 0usize;
    for (ci, case) in cases.iter().enumerate() {
        let dims = case.sample.image.dims;
        let xs = window_origins(dims[0].max(patch), patch, patch);
        let ys = window_origins(dims[1].max(patch), patch, patch);
        let zs = window_origins(dims[2].max(patch), patch, patch);
        for &oz in &zs {
            for &oy in &ys {
                for &ox in &xs {
                    let off = [ox, oy, oz];
                    let (img, g, mask) = patch_triple(case, off, patch, pad_intensity);
                    if mask_is_empty(&mask) {
                        continue;
                    }
                    let input = match label_channel {
                        None => img,
                        Some(labels) => {
                            let lab = extract_patch_mask(&labels[ci], off, patch);
                            Tensor::stack(&[&img, &lab])
                        }
                    };
                    let (y, _) = forward(spec, params, &input)?;
                    total += dice_loss(&y, &g, Some(&mask))?;
                    tiles += 1;
                }
            }
        }
    }
    if tiles == 0 {
        return Err(Error::Config("validation produced no usable tiles".into()));
    }
    Ok(total / tiles as f64)
}

/// Train the base segmentation network on (image -> ground truth) patches
/// with the masked Dice loss; returns the best-on-validation checkpoint.
pub fn train_base(
    cfg: &ExperimentConfig,
    train: &[CaseData],
    val: &[CaseData],
    logger: &mut RunLogger,
) -> Result<TrainedModel> {
    if train.is_empty() {
        return Err(Error::Config("no training cases".into()));
    }
    let spec = unet_spec(cfg.levels, cfg.base_channels, 1, cfg.norm);
    let mut params =
        init_params::<f32>(&spec, &mut sub_rng(cfg.seed, &["base", "init"]))?;
    let mut opt = OptimizerState::new(&params, cfg.learning_rate);
    let mut rng = sub_rng(cfg.seed, &["base", "sampling"]);
    let mut best: Option<(f64, ModelParams<f32>)> = None;

    for step in 0..cfg.base_steps {
        let case = &train[rng.random_range(0..train.len())];
        let off = random_offset(case.sample.image.dims, cfg.patch_size, &mut rng);
        let tr = sample_transform(&cfg.augment, &mut rng);
        let (img, g, mask) = patch_triple(case, off, cfg.patch_size, cfg.pad_intensity);
        let img = apply_transform_tensor(&img, &tr, true, cfg.pad_intensity);
        let g = apply_transform_mask(&g, &tr);
        let mask = apply_transform_mask(&mask, &tr);

        if mask_is_empty(&mask) {
            logger.log(json!({"stage": "base", "step": step, "loss": 0.0, "skipped": true}));
            continue;
        }
        let (y, cache) = forward(&spec, &params, &img)?;
        let loss = dice_loss(&y, &g, Some(&mask))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        logger.log(json!({"stage": "base", "step": step, "loss": loss}));
        let grad = dice_loss_backward(&y, &g, Some(&mask))?;
        let (pgrads, _) = backward(&spec, &params, &cache, &grad)?;
        adam_step(&mut params, &pgrads, &mut opt)?;

        if cfg.val_interval > 0 && !val.is_empty() && (step + 1) % cfg.val_interval == 0 {
            let vloss = validate(&spec, &params, val, None, cfg.patch_size, cfg.pad_intensity)?;
            logger.log(json!({"stage": "base_val", "step": step, "loss": vloss}));
            if best.as_ref().is_none_or(|(b, _)| vloss < *b) {
                best = Some((vloss, params.clone()));
            }
        }
    }
    logger.flush();
    let (best_val_loss, params) = match best {
        Some((v, p)) => (Some(v), p),
        None => (None, params),
    };
    Ok(TrainedModel { spec, params, best_val_loss, label_sources: None })
}

/// The appearance-simulation generator and its discriminator.
#[derive(Clone, Debug)]
pub struct LasnModels {
    pub generator: TrainedModel,
    pub discriminator: TrainedModel,
}

fn scalar_grad(t: &Tensor<f32>, g: f64) -> Tensor<f32> {
    let mut out = Tensor::zeros(t.channels, t.dims);
    out.data[0] = g as f32;
    out
}

fn add_param_grads(a: &mut ModelParams<f32>, b: &ModelParams<f32>) {
    for (pa, pb) in a.params.iter_mut().zip(&b.params) {
        for (x, y) in pa.w.iter_mut().zip(&pb.w) {
            *x += *y;
        }
        for (x, y) in pa.b.iter_mut().zip(&pb.b) {
            *x += *y;
        }
    }
}

/// Adversarial training of the label appearance simulation network: the
/// discriminator separates real initial segmentations from simulated labels,
/// while the generator fools it under a Dice identity constraint that keeps
/// the injected errors intact.
pub fn train_lasn(
    cfg: &ExperimentConfig,
    x1_set: &[BinaryMask],
    syn_set: &[Vec<BinaryMask>],
    logger: &mut RunLogger,
) -> Result<LasnModels> {
    if x1_set.is_empty() || syn_set.iter().all(|v| v.is_empty()) {
        return Err(Error::Config("LASN training needs initial and synthetic labels".into()));
    }
    let g_spec = unet_spec(cfg.levels, cfg.base_channels, 1, cfg.norm);
    let d_spec = discriminator_spec(cfg.levels, cfg.base_channels, 1, cfg.norm);
    let mut g_params = init_params::<f32>(&g_spec, &mut sub_rng(cfg.seed, &["lasn", "g-init"]))?;
    let mut d_params = init_params::<f32>(&d_spec, &mut sub_rng(cfg.seed, &["lasn", "d-init"]))?;
    let mut g_opt = OptimizerState::new(&g_params, cfg.learning_rate);
    let mut d_opt = OptimizerState::new(&d_params, cfg.learning_rate);
    let mut rng = sub_rng(cfg.seed, &["lasn", "sampling"]);
    let eps = crate::model::D_CLAMP_EPS;

    let pick_patch = |m: &BinaryMask, rng: &mut Rng, cfg: &ExperimentConfig| {
        let off = random_offset(m.dims, cfg.patch_size, rng);
        extract_patch_mask(m, off, cfg.patch_size)
    };

    for step in 0..cfg.lasn_steps {
        let real = pick_patch(&x1_set[rng.random_range(0..x1_set.len())], &mut rng, cfg);
        let syn_case = &syn_set[rng.random_range(0..syn_set.len())];
        let syn = pick_patch(&syn_case[rng.random_range(0..syn_case.len())], &mut rng, cfg);

        // generator forward
        let (xa, g_cache) = forward(&g_spec, &g_params, &syn)?;

        // discriminator update on (real, detached fake)
        let (d_real_t, d_real_cache) = forward(&d_spec, &d_params, &real)?;
        let (d_fake_t, d_fake_cache) = forward(&d_spec, &d_params, &xa)?;
        let d_real = (d_real_t.data[0] as f64).clamp(eps, 1.0 - eps);
        let d_fake = (d_fake_t.data[0] as f64).clamp(eps, 1.0 - eps);
        let adv: AdvLosses = crate::model::adversarial_losses(&[d_real], &[d_fake]);

        let (mut d_grads, _) =
            backward(&d_spec, &d_params, &d_real_cache, &scalar_grad(&d_real_t, -1.0 / d_real))?;
        let (fake_grads, _) = backward(
            &d_spec,
            &d_params,
            &d_fake_cache,
            &scalar_grad(&d_fake_t, 1.0 / (1.0 - d_fake)),
        )?;
        add_param_grads(&mut d_grads, &fake_grads);
        adam_step(&mut d_params, &d_grads, &mut d_opt)?;

        // generator update through the updated discriminator
        let (d_g_t, d_g_cache) = forward(&d_spec, &d_params, &xa)?;
        let d_g = (d_g_t.data[0] as f64).clamp(eps, 1.0 - eps);
        let adv_grad = if cfg.non_saturating {
            -1.0 / d_g // d/dd of -log(d)
        } else {
            -1.0 / (1.0 - d_g) // d/dd of log(1 - d)
        };
        let (_, mut dxa) = backward(&d_spec, &d_params, &d_g_cache, &scalar_grad(&d_g_t, adv_grad))?;
        let identity = dice_loss(&xa, &syn, None)?;
        let id_grad = dice_loss_backward(&xa, &syn, None)?;
        let lambda = cfg.lambda_identity as f32;
        for (d, g) in dxa.data.iter_mut().zip(&id_grad.data) {
            *d += lambda * *g;
        }
        let (g_grads, _) = backward(&g_spec, &g_params, &g_cache, &dxa)?;
        adam_step(&mut g_params, &g_grads, &mut g_opt)?;

        let loss_g = if cfg.non_saturating { -d_g.ln() } else { (1.0 - d_g).ln() };
        if !adv.loss_d.is_finite() || !loss_g.is_finite() || !identity.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        logger.log(json!({
            "stage": "lasn",
            "step": step,
            "loss_d": adv.loss_d,
            "loss_g_adv": loss_g,
            "identity": identity,
            "l_adv": adv.l_adv,
        }));
    }
    logger.flush();
    Ok(LasnModels {
        generator: TrainedModel {
            spec: g_spec,
            params: g_params,
            best_val_loss: None,
            label_sources: None,
        },
        discriminator: TrainedModel {
            spec: d_spec,
            params: d_params,
            best_val_loss: None,
            label_sources: None,
        },
    })
}

/// Per-case inputs for refinement training.
pub struct RefinerInputs<'a> {
    pub cases: &'a [CaseData],
    /// Initial segmentations aligned with `cases`.
    pub x1: &'a [BinaryMask],
    /// Synthetic label-channel variants per case (soft or binary, as
    /// volumes); empty inner vectors fall back to the initial segmentation.
    pub synthetic: &'a [Vec<Volume>],
}

/// Train the refinement network on 2-channel (image, label) inputs where the
/// label channel is sampled from the initial segmentation or the synthetic
/// side with probability `mix_ratio`.
pub fn train_refiner(
    cfg: &ExperimentConfig,
    inputs: &RefinerInputs,
    val: &[CaseData],
    val_x1: &[BinaryMask],
    logger: &mut RunLogger,
) -> Result<TrainedModel> {
    if inputs.cases.is_empty() {
        return Err(Error::Config("no refinement training cases".into()));
    }
    if inputs.cases.len() != inputs.x1.len() || inputs.cases.len() != inputs.synthetic.len() {
        return Err(Error::Config("refiner inputs are misaligned".into()));
    }
    let spec = unet_spec(cfg.levels, cfg.base_channels, 2, cfg.norm);
    let mut params =
        init_params::<f32>(&spec, &mut sub_rng(cfg.seed, &["refine", "init"]))?;
    let mut opt = OptimizerState::new(&params, cfg.learning_rate);
    let mut rng = sub_rng(cfg.seed, &["refine", "sampling"]);
    let mut best: Option<(f64, ModelParams<f32>)> = None;
    let mut from_initial = 0usize;
    let mut from_synthetic = 0usize;

    let effective_mix = if cfg.ablation == AblationMode::Lr { 0.0 } else { cfg.mix_ratio };

    for step in 0..cfg.refine_steps {
        let ci = rng.random_range(0..inputs.cases.len());
        let case = &inputs.cases[ci];
        let use_synthetic = {
            let u: f64 = rng.random();
            u < effective_mix && !inputs.synthetic[ci].is_empty()
        };
        let off = random_offset(case.sample.image.dims, cfg.patch_size, &mut rng);
        let tr = sample_transform(&cfg.augment, &mut rng);

        let (img, g, mask) = patch_triple(case, off, cfg.patch_size, cfg.pad_intensity);
        let label = if use_synthetic {
            from_synthetic += 1;
            let variants = &inputs.synthetic[ci];
            let v = &variants[rng.random_range(0..variants.len())];
            extract_patch_volume(v, off, cfg.patch_size, 0.0)
        } else {
            from_initial += 1;
            extract_patch_mask(&inputs.x1[ci], off, cfg.patch_size)
        };

        let img = apply_transform_tensor(&img, &tr, true, cfg.pad_intensity);
        let label = apply_transform_tensor(&label, &tr, true, 0.0);
        let g = apply_transform_mask(&g, &tr);
        let mask = apply_transform_mask(&mask, &tr);

        if mask_is_empty(&mask) {
            logger.log(json!({"stage": "refine", "step": step, "loss": 0.0, "skipped": true}));
            continue;
        }
        let input = Tensor::stack(&[&img, &label]);
        let (y, cache) = forward(&spec, &params, &input)?;
        let loss = dice_loss(&y, &g, Some(&mask))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        logger.log(json!({"stage": "refine", "step": step, "loss": loss}));
        let grad = dice_loss_backward(&y, &g, Some(&mask))?;
        let (pgrads, _) = backward(&spec, &params, &cache, &grad)?;
        adam_step(&mut params, &pgrads, &mut opt)?;

        if cfg.val_interval > 0 && !val.is_empty() && (step + 1) % cfg.val_interval == 0 {
            let vloss =
                validate(&spec, &params, val, Some(val_x1), cfg.patch_size, cfg.pad_intensity)?;
            logger.log(json!({"stage": "refine_val", "step": step, "loss": vloss}));
            if best.as_ref().is_none_or(|(b, _)| vloss < *b) {
                best = Some((vloss, params.clone()));
            }
        }
    }
    logger.flush();
    let (best_val_loss, params) = match best {
        Some((v, p)) => (Some(v), p),
        None => (None, params),
    };
    Ok(TrainedModel {
        spec,
        params,
        best_val_loss,
        label_sources: Some((from_initial, from_synthetic)),
    })
}
