use std::time::Instant;

use serde::Serialize;

use super::{
    adam_step, feature_matching_taped, gan_d_loss_taped, gan_g_loss, gan_g_loss_taped,
    latent_loss_taped, reconstruction_loss_taped, AdamState, BackendChoice, MetricsRow,
    TrainConfig, TrainError,
};
use crate::generators::{map_f, sample_z, Generator, Image, LatentKind, LatentVector, Mapping};
use crate::imaging::{diversity_metric, laplacian_energy, mse, reconstruct};
use crate::models::{
    discriminator_forward, projector_forward, Network, NetworkSpec, ParameterStore, W_DIM,
};
use crate::numcore::{Tape, Tensor, Var};
use crate::rng::{derive_seed, SplitMix64};

/// Sub-stream ids for [`derive_seed`] / [`SplitMix64::stream`].
pub mod streams {
    pub const Z: u64 = 1;
    pub const P_INIT: u64 = 2;
    pub const OOD: u64 = 3;
    pub const D_INIT: u64 = 4;
    pub const HELDOUT: u64 = 5;
    pub const SMOOTHING: u64 = 6;
    pub const HELDOUT_OOD: u64 = 7;
    pub const F: u64 = 10;
    pub const DECODER: u64 = 11;
    pub const OOD_F: u64 = 12;
}

/// How many recent losses a non-finite abort reports.
const RECENT: usize = 10;

/// The frozen pieces every trainer samples from: F, G, and the OOD renderer
/// with the mapping that feeds it.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub mapping: Mapping,
    pub generator: Generator,
    pub ood: Generator,
    pub ood_mapping: Mapping,
    pub z_dim: usize,
}

impl World {
    pub fn new(cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let gs = cfg.generator_seed;
        let mapping = Mapping::mlp(cfg.z_dim, cfg.w_dim, derive_seed(gs, streams::F))?;
        let generator = match cfg.backend {
            BackendChoice::Procedural => Generator::procedural(cfg.resolution),
            BackendChoice::Neural => Generator::neural_decoder(
                cfg.w_dim,
                cfg.resolution,
                derive_seed(gs, streams::DECODER),
            )?,
        };
        let ood = Generator::procedural(cfg.resolution).make_ood_variant()?;
        // The OOD renderer always takes renderer-sized latents.
        let ood_mapping = if cfg.w_dim == W_DIM {
            mapping.clone()
        } else {
            Mapping::mlp(cfg.z_dim, W_DIM, derive_seed(gs, streams::OOD_F))?
        };
        Ok(Self { mapping, generator, ood, ood_mapping, z_dim: cfg.z_dim })
    }

    pub fn resolution(&self) -> usize {
        self.generator.resolution()
    }

    pub fn w_dim(&self) -> usize {
        self.generator.w_dim()
    }

    fn checksums(&self) -> [u64; 4] {
        [
            self.mapping.checksum(),
            self.generator.checksum(),
            self.ood.checksum(),
            self.ood_mapping.checksum(),
        ]
    }

    /// `w = F(z)` as a `[n, w_dim]` tensor for fresh z.
    pub fn sample_w(&self, rng: &mut SplitMix64, n: usize) -> Result<Tensor, TrainError> {
        let w = map_f(&self.mapping, &sample_z(rng, n, self.z_dim))?;
        Ok(LatentVector::batch_tensor(&w)?)
    }

    /// `(w, G(w))` as tensors.
    pub fn sample(&self, rng: &mut SplitMix64, n: usize) -> Result<(Tensor, Tensor), TrainError> {
        let w = self.sample_w(rng, n)?;
        let x = self.generator.render_tensor(&w)?;
        Ok((w, x))
    }

    /// A batch of out-of-distribution images `[n, 1, res, res]`.
    pub fn sample_ood(&self, rng: &mut SplitMix64, n: usize) -> Result<Tensor, TrainError> {
        let w = map_f(&self.ood_mapping, &sample_z(rng, n, self.z_dim))?;
        Ok(self.ood.render_tensor(&LatentVector::batch_tensor(&w)?)?)
    }

    /// Held-out in-distribution set, disjoint in stream from training draws.
    pub fn heldout(&self, seed: u64, n: usize) -> Result<(Vec<LatentVector>, Vec<Image>), TrainError> {
        let mut rng = SplitMix64::stream(seed, streams::HELDOUT);
        let (w, x) = self.sample(&mut rng, n)?;
        Ok((LatentVector::from_batch_tensor(LatentKind::W, &w), Image::from_batch_tensor(&x)?))
    }

    /// Held-out OOD set.
    pub fn heldout_ood(&self, seed: u64, n: usize) -> Result<Vec<Image>, TrainError> {
        let mut rng = SplitMix64::stream(seed, streams::HELDOUT_OOD);
        Ok(Image::from_batch_tensor(&self.sample_ood(&mut rng, n)?)?)
    }
}

/// Fresh projector for `cfg`, seeded from the run seed.
pub fn init_projector(cfg: &TrainConfig) -> Result<Network, TrainError> {
    Ok(Network::new(
        NetworkSpec::projector(cfg.resolution, cfg.w_dim),
        derive_seed(cfg.seed, streams::P_INIT),
    )?)
}

pub fn init_discriminator(cfg: &TrainConfig) -> Result<Network, TrainError> {
    Ok(Network::new(NetworkSpec::discriminator(cfg.resolution), derive_seed(cfg.seed, streams::D_INIT))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRun {
    pub projector: Network,
    pub metrics: Vec<MetricsRow>,
    /// Objective value at every step, before that step's update.
    pub losses: Vec<f64>,
}

fn check_finite(step: usize, values: &[f64], losses: &[f64]) -> Result<(), TrainError> {
    if values.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    let mut recent: Vec<f64> = losses[losses.len().saturating_sub(RECENT)..].to_vec();
    recent.extend_from_slice(values);
    Err(TrainError::NonFinite { step, recent })
}

fn check_projector(p: &Network, cfg: &TrainConfig) -> Result<(), TrainError> {
    let want = NetworkSpec::projector(cfg.resolution, cfg.w_dim);
    if p.spec != want {
        return Err(TrainError::Config(format!(
            "projector architecture does not match resolution {} and w_dim {}",
            cfg.resolution, cfg.w_dim
        )));
    }
    Ok(())
}

fn scalar(tape: &Tape, v: Var) -> Result<f64, TrainError> {
    Ok(tape.value(v).item()?)
}

fn ms_since(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Unsupervised latent regression: `P(G(F(z))) ~ F(z)` with F and G frozen.
/// `init` continues from existing weights; otherwise P is freshly seeded.
pub fn train_projection(
    world: &World,
    cfg: &TrainConfig,
    init: Option<Network>,
) -> Result<ProjectionRun, TrainError> {
    let p = match init {
        Some(p) => p,
        None => init_projector(cfg)?,
    };
    projection_loop(world, cfg, p, None)
}

/// Shared loop for the latent objective with an optional weighted OOD
/// reconstruction term. A zero weight skips the term entirely so the run is
/// byte-identical to plain latent training.
fn projection_loop(
    world: &World,
    cfg: &TrainConfig,
    mut p: Network,
    ood_weight: Option<f64>,
) -> Result<ProjectionRun, TrainError> {
    cfg.validate()?;
    check_projector(&p, cfg)?;
    let frozen = world.checksums();
    let mut z_rng = SplitMix64::stream(cfg.seed, streams::Z);
    let mut ood_rng = SplitMix64::stream(cfg.seed, streams::OOD);
    let weight = ood_weight.filter(|&l| l > 0.0);
    let adam = cfg.adam();
    let mut state = AdamState::new(&p.params);
    let mut metrics = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let start = Instant::now();

    for i in 0..cfg.steps {
        let (w, x) = world.sample(&mut z_rng, cfg.batch_size)?;
        let mut tape = Tape::new();
        let bound = p.params.bind(&mut tape, true);
        let xv = tape.constant(x);
        let wv = tape.constant(w);
        let pred = projector_forward(&p, &mut tape, &bound, xv)?;
        let latent = latent_loss_taped(&mut tape, pred, wv)?;
        let mut total = latent;
        let mut recon = None;
        if let Some(lambda) = weight {
            let x_ood = tape.constant(world.sample_ood(&mut ood_rng, cfg.batch_size)?);
            let po = projector_forward(&p, &mut tape, &bound, x_ood)?;
            let xr = world.generator.render_taped(&mut tape, po, None)?;
            let r = reconstruction_loss_taped(&mut tape, xr, x_ood)?;
            let scaled = tape.mul_const(r, lambda);
            total = tape.add(latent, scaled)?;
            recon = Some(r);
        }
        let total_v = scalar(&tape, total)?;
        let latent_v = scalar(&tape, latent)?;
        let recon_v = recon.map(|r| scalar(&tape, r)).transpose()?;
        check_finite(i, &[total_v], &losses)?;
        losses.push(total_v);
        tape.backward(total)?;
        let grads = p.params.gradients(&tape, &bound)?;
        adam_step(&mut p.params, &grads, &mut state, &adam)?;
        if i % cfg.eval_every == 0 {
            metrics.push(MetricsRow {
                step: i + 1,
                latent_loss: Some(latent_v),
                recon_loss: recon_v,
                ms: ms_since(start),
                ..Default::default()
            });
        }
    }
    if world.checksums() != frozen {
        return Err(TrainError::Frozen("F or G"));
    }
    Ok(ProjectionRun { projector: p, metrics, losses })
}

/// Supervised baseline: minimise `|G(P(x)) - x|^2` with the gradient passing
/// through the frozen G. The latent error is logged as a diagnostic only.
pub fn train_supervised_baseline(
    world: &World,
    cfg: &TrainConfig,
    init: Option<Network>,
) -> Result<ProjectionRun, TrainError> {
    cfg.validate()?;
    let mut p = match init {
        Some(p) => p,
        None => init_projector(cfg)?,
    };
    check_projector(&p, cfg)?;
    let frozen = world.checksums();
    let mut z_rng = SplitMix64::stream(cfg.seed, streams::Z);
    let adam = cfg.adam();
    let mut state = AdamState::new(&p.params);
    let mut metrics = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let start = Instant::now();

    for i in 0..cfg.steps {
        let (w, x) = world.sample(&mut z_rng, cfg.batch_size)?;
        let mut tape = Tape::new();
        let bound = p.params.bind(&mut tape, true);
        let xv = tape.constant(x);
        let pred = projector_forward(&p, &mut tape, &bound, xv)?;
        let xr = world.generator.render_taped(&mut tape, pred, None)?;
        let loss = reconstruction_loss_taped(&mut tape, xr, xv)?;
        let loss_v = scalar(&tape, loss)?;
        check_finite(i, &[loss_v], &losses)?;
        losses.push(loss_v);
        let latent_v = mean_sq(tape.value(pred).data(), w.data());
        tape.backward(loss)?;
        let grads = p.params.gradients(&tape, &bound)?;
        adam_step(&mut p.params, &grads, &mut state, &adam)?;
        if i % cfg.eval_every == 0 {
            metrics.push(MetricsRow {
                step: i + 1,
                latent_loss: Some(latent_v),
                recon_loss: Some(loss_v),
                ms: ms_since(start),
                ..Default::default()
            });
        }
    }
    if world.checksums() != frozen {
        return Err(TrainError::Frozen("F or G"));
    }
    Ok(ProjectionRun { projector: p, metrics, losses })
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Before/after comparison over a fixed OOD set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothingReport {
    pub images: usize,
    pub laplacian_originals: f64,
    pub laplacian_before: f64,
    pub laplacian_after: f64,
    /// `laplacian_after / laplacian_before`.
    pub laplacian_ratio: f64,
    pub ood_mse_before: f64,
    pub ood_mse_after: f64,
    pub smoother_after: bool,
}

/// Size of the fixed OOD probe set.
pub const SMOOTHING_SET: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneRun {
    pub run: ProjectionRun,
    pub report: SmoothingReport,
}

fn mean_laplacian(images: &[Image]) -> Result<f64, TrainError> {
    let mut s = 0.0;
    for im in images {
        s += laplacian_energy(im)?;
    }
    Ok(s / images.len() as f64)
}

fn mean_mse(a: &[Image], b: &[Image]) -> Result<f64, TrainError> {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += mse(x, y)?;
    }
    Ok(s / a.len() as f64)
}

/// Continues latent training of `p` with an added `lambda_recon`-weighted
/// reconstruction term on OOD images, then probes smoothing.
pub fn finetune_reconstruction(
    world: &World,
    cfg: &TrainConfig,
    p: Network,
) -> Result<FinetuneRun, TrainError> {
    let probe = {
        let mut rng = SplitMix64::stream(cfg.seed, streams::SMOOTHING);
        Image::from_batch_tensor(&world.sample_ood(&mut rng, SMOOTHING_SET)?)?
    };
    let before = reconstruct(&p, &world.generator, &probe)?;
    let run = projection_loop(world, cfg, p, Some(cfg.lambda_recon))?;
    let after = reconstruct(&run.projector, &world.generator, &probe)?;
    let laplacian_before = mean_laplacian(&before)?;
    let laplacian_after = mean_laplacian(&after)?;
    let report = SmoothingReport {
        images: probe.len(),
        laplacian_originals: mean_laplacian(&probe)?,
        laplacian_before,
        laplacian_after,
        laplacian_ratio: laplacian_after / laplacian_before,
        ood_mse_before: mean_mse(&before, &probe)?,
        ood_mse_after: mean_mse(&after, &probe)?,
        smoother_after: laplacian_after <= laplacian_before,
    };
    Ok(FinetuneRun { run, report })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollapseRow {
    pub step: usize,
    pub diversity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointRun {
    pub projector: Network,
    /// G with its final decoder weights.
    pub generator: Generator,
    pub discriminator: Network,
    pub metrics: Vec<MetricsRow>,
    pub losses: Vec<f64>,
    pub collapse: Vec<CollapseRow>,
}

/// Alternating adversarial training. Each step first updates D on OOD
/// images (real) against `G(P(x_ood))` (fake), then updates P, and G when
/// `train_generator` is set, on the latent loss plus the weighted
/// non-saturating and feature-matching terms. No convergence is expected;
/// the run records batch diversity of the fakes at every evaluation.
pub fn train_joint_adversarial(
    world: &World,
    cfg: &TrainConfig,
    mut p: Network,
) -> Result<JointRun, TrainError> {
    cfg.validate()?;
    check_projector(&p, cfg)?;
    let mut gen = world.generator.clone();
    if gen.decoder().is_none() {
        return Err(TrainError::Backend(
            "joint training needs the neural decoder backend (backend=neural)".into(),
        ));
    }
    let mut d = init_discriminator(cfg)?;
    let frozen_f = (world.mapping.checksum(), world.ood.checksum(), world.ood_mapping.checksum());
    let mut z_rng = SplitMix64::stream(cfg.seed, streams::Z);
    let mut ood_rng = SplitMix64::stream(cfg.seed, streams::OOD);
    let adam = cfg.adam();
    let mut p_state = AdamState::new(&p.params);
    let mut d_state = AdamState::new(&d.params);
    let mut g_state = AdamState::new(&gen.decoder().expect("decoder").params);
    let adversarial = cfg.lambda_adv > 0.0 || cfg.lambda_fm > 0.0;
    let mut metrics = Vec::new();
    let mut collapse = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let start = Instant::now();

    for i in 0..cfg.steps {
        let w = world.sample_w(&mut z_rng, cfg.batch_size)?;
        let x_ood = world.sample_ood(&mut ood_rng, cfg.batch_size)?;
        let fake = gen.render_tensor(&p.eval(&x_ood)?)?;

        // Discriminator step.
        let mut tape = Tape::new();
        let bd = d.params.bind(&mut tape, true);
        let real_v = tape.constant(x_ood.clone());
        let fake_v = tape.constant(fake.clone());
        let (real_logits, real_taps) = discriminator_forward(&d, &mut tape, &bd, real_v)?;
        let (fake_logits, fake_taps) = discriminator_forward(&d, &mut tape, &bd, fake_v)?;
        let dl = gan_d_loss_taped(&mut tape, real_logits, fake_logits)?;
        let d_loss = scalar(&tape, dl)?;
        let eval = i % cfg.eval_every == 0;
        let probe = if eval {
            let fm = feature_matching_taped(&mut tape, &real_taps, &fake_taps)?;
            let fm = scalar(&tape, fm)?;
            let g_adv = gan_g_loss(tape.value(fake_logits).data())?;
            Some((g_adv, fm))
        } else {
            None
        };
        check_finite(i, &[d_loss], &losses)?;
        tape.backward(dl)?;
        let grads = d.params.gradients(&tape, &bd)?;
        adam_step(&mut d.params, &grads, &mut d_state, &adam)?;

        // Projector (and decoder) step.
        let mut tape = Tape::new();
        let bp = p.params.bind(&mut tape, true);
        let bg = if cfg.train_generator {
            Some(gen.decoder().expect("decoder").params.bind(&mut tape, true))
        } else {
            None
        };
        let wv = tape.constant(w.clone());
        let x_in = if cfg.train_generator {
            gen.render_taped(&mut tape, wv, bg.as_ref())?
        } else {
            tape.constant(gen.render_tensor(&w)?)
        };
        let pred = projector_forward(&p, &mut tape, &bp, x_in)?;
        let latent = latent_loss_taped(&mut tape, pred, wv)?;
        let mut total = latent;
        if adversarial {
            let bd = d.params.bind(&mut tape, false);
            let xo = tape.constant(x_ood);
            let po = projector_forward(&p, &mut tape, &bp, xo)?;
            let xf = gen.render_taped(&mut tape, po, bg.as_ref())?;
            let (logits, ft) = discriminator_forward(&d, &mut tape, &bd, xf)?;
            let (_, rt) = discriminator_forward(&d, &mut tape, &bd, xo)?;
            let ga = gan_g_loss_taped(&mut tape, logits);
            let fm = feature_matching_taped(&mut tape, &rt, &ft)?;
            let ga = tape.mul_const(ga, cfg.lambda_adv);
            let fm = tape.mul_const(fm, cfg.lambda_fm);
            let adv = tape.add(ga, fm)?;
            total = tape.add(total, adv)?;
        }
        let total_v = scalar(&tape, total)?;
        let latent_v = scalar(&tape, latent)?;
        check_finite(i, &[total_v], &losses)?;
        losses.push(total_v);
        tape.backward(total)?;
        let grads = p.params.gradients(&tape, &bp)?;
        adam_step(&mut p.params, &grads, &mut p_state, &adam)?;
        if let Some(bg) = &bg {
            let mut g_params = gen.decoder().expect("decoder").params.clone();
            let grads = g_params.gradients(&tape, bg)?;
            adam_step(&mut g_params, &grads, &mut g_state, &adam)?;
            gen = gen.with_decoder_params(g_params)?;
        }

        if let Some((g_adv, fm)) = probe {
            let diversity = diversity_metric(&Image::from_batch_tensor(&fake)?).ok();
            if let Some(dv) = diversity {
                collapse.push(CollapseRow { step: i + 1, diversity: dv });
            }
            metrics.push(MetricsRow {
                step: i + 1,
                latent_loss: Some(latent_v),
                recon_loss: None,
                d_loss: Some(d_loss),
                g_adv: Some(g_adv),
                fm: Some(fm),
                diversity,
                ms: ms_since(start),
            });
        }
    }
    if (world.mapping.checksum(), world.ood.checksum(), world.ood_mapping.checksum()) != frozen_f {
        return Err(TrainError::Frozen("F"));
    }
    Ok(JointRun { projector: p, generator: gen, discriminator: d, metrics, losses, collapse })
}

/// `store` with every name prefixed, for packing several networks into one
/// checkpoint.
pub fn prefixed(prefix: &str, store: &ParameterStore) -> Result<ParameterStore, TrainError> {
    let mut out = ParameterStore::new();
    for (name, t) in store.iter() {
        out.insert(format!("{prefix}{name}"), t.clone())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(steps: usize) -> TrainConfig {
        TrainConfig { steps, batch_size: 4, eval_every: 2, ..TrainConfig::default() }
    }

    fn strip_time(rows: &[MetricsRow]) -> Vec<MetricsRow> {
        rows.iter().map(MetricsRow::without_time).collect()
    }

    #[test]
    fn projection_is_deterministic_and_leaves_world_frozen() {
        let cfg = small(6);
        let world = World::new(&cfg).unwrap();
        let before = world.clone();
        let a = train_projection(&world, &cfg, None).unwrap();
        let b = train_projection(&world, &cfg, None).unwrap();
        assert_eq!(a.projector.params, b.projector.params);
        assert_eq!(strip_time(&a.metrics), strip_time(&b.metrics));
        assert_eq!(a.losses, b.losses);
        assert_eq!(world, before);
        assert_eq!(a.metrics.len(), 3);
        assert!(a.metrics.windows(2).all(|r| r[0].step < r[1].step));
    }

    #[test]
    fn constant_mapping_is_fit_by_the_bias() {
        let cfg = TrainConfig { steps: 1500, batch_size: 4, eval_every: 500, learning_rate: 1e-2, ..TrainConfig::default() };
        let mut world = World::new(&cfg).unwrap();
        let w0 = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.0, -0.1];
        world.mapping = Mapping::Constant(w0.clone());
        let run = train_projection(&world, &cfg, None).unwrap();
        let final_loss = *run.losses.last().unwrap();
        assert!(final_loss < 1e-6, "final loss {final_loss}");
        // Every training image is G(w0), so that is where P must agree.
        let x0 = world.sample(&mut SplitMix64::new(77), 2).unwrap().1;
        let out = run.projector.eval(&x0).unwrap();
        for row in 0..2 {
            for (a, b) in out.row(row).iter().zip(&w0) {
                assert!((a - b).abs() < 2e-3, "{a} vs {b}");
            }
        }
        // Oracle: zero weights with the final bias set to w0 maps any x to w0.
        let mut oracle = init_projector(&cfg).unwrap();
        let last = oracle.params.names().last().unwrap().clone();
        for (name, t) in oracle.params.iter_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
            if name == last {
                t.data_mut().copy_from_slice(&w0);
            }
        }
        let mut rng = SplitMix64::new(5);
        let noise: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.next_f64()).collect();
        let out = oracle.eval(&Tensor::new(vec![3, 1, 32, 32], noise).unwrap()).unwrap();
        assert!((0..3).all(|r| out.row(r) == w0.as_slice()));
    }

    #[test]
    fn baseline_gradient_reaches_projector() {
        let cfg = small(1);
        let world = World::new(&cfg).unwrap();
        let p0 = init_projector(&cfg).unwrap();
        let run = train_supervised_baseline(&world, &cfg, Some(p0.clone())).unwrap();
        assert_ne!(run.projector.params, p0.params);
        let again = train_supervised_baseline(&world, &cfg, Some(p0)).unwrap();
        assert_eq!(run.projector.params, again.projector.params);
    }

    #[test]
    fn finetune_with_zero_weight_matches_continued_training() {
        let cfg = small(4);
        let world = World::new(&cfg).unwrap();
        let p = train_projection(&world, &cfg, None).unwrap().projector;
        let zero = TrainConfig { lambda_recon: 0.0, seed: 9, ..cfg.clone() };
        let ft = finetune_reconstruction(&world, &zero, p.clone()).unwrap();
        let cont = train_projection(&world, &zero, Some(p)).unwrap();
        assert_eq!(ft.run.projector.params.checksum(), cont.projector.params.checksum());
        assert_eq!(strip_time(&ft.run.metrics), strip_time(&cont.metrics));
        assert_eq!(ft.report.images, SMOOTHING_SET);
        assert!(ft.report.laplacian_before.is_finite() && ft.report.laplacian_after.is_finite());
    }

    #[test]
    fn finetune_records_ood_term() {
        let cfg = small(3);
        let world = World::new(&cfg).unwrap();
        let p = init_projector(&cfg).unwrap();
        let ft = finetune_reconstruction(&world, &cfg, p).unwrap();
        assert!(ft.run.metrics.iter().all(|r| r.recon_loss.is_some()));
        let json = serde_json::to_string(&ft.report).unwrap();
        assert!(json.contains("laplacian_ratio"));
    }

    fn neural(steps: usize) -> TrainConfig {
        TrainConfig { backend: BackendChoice::Neural, ..small(steps) }
    }

    #[test]
    fn joint_requires_decoder() {
        let cfg = small(2);
        let world = World::new(&cfg).unwrap();
        let p = init_projector(&cfg).unwrap();
        assert!(matches!(train_joint_adversarial(&world, &cfg, p), Err(TrainError::Backend(_))));
    }

    #[test]
    fn joint_with_zero_weights_matches_projection() {
        let cfg = TrainConfig { lambda_adv: 0.0, lambda_fm: 0.0, train_generator: false, ..neural(4) };
        let world = World::new(&cfg).unwrap();
        let p = init_projector(&cfg).unwrap();
        let joint = train_joint_adversarial(&world, &cfg, p.clone()).unwrap();
        let zero = TrainConfig { lambda_recon: 0.0, ..cfg.clone() };
        let ft = finetune_reconstruction(&world, &zero, p).unwrap();
        assert_eq!(joint.projector.params, ft.run.projector.params);
        let lat = |rows: &[MetricsRow]| rows.iter().map(|r| r.latent_loss).collect::<Vec<_>>();
        assert_eq!(lat(&joint.metrics), lat(&ft.run.metrics));
        assert!(joint.metrics.iter().all(|r| r.d_loss.is_some()));
        assert_eq!(joint.generator, world.generator);
    }

    #[test]
    fn joint_runs_and_reports_diversity() {
        let cfg = neural(6);
        let world = World::new(&cfg).unwrap();
        let p = init_projector(&cfg).unwrap();
        let a = train_joint_adversarial(&world, &cfg, p.clone()).unwrap();
        let b = train_joint_adversarial(&world, &cfg, p).unwrap();
        assert_eq!(a.collapse.len(), cfg.steps / cfg.eval_every);
        assert!(a.losses.iter().all(|l| l.is_finite()));
        assert_ne!(a.generator, world.generator);
        assert_eq!(a.projector.params, b.projector.params);
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.collapse, b.collapse);
    }

    #[test]
    fn non_finite_abort_carries_step() {
        let cfg = TrainConfig { learning_rate: 1e300, ..small(5) };
        let world = World::new(&cfg).unwrap();
        match train_projection(&world, &cfg, None) {
            Err(TrainError::NonFinite { step, recent }) => {
                assert!(step >= 1);
                assert!(!recent.is_empty());
            }
            other => panic!("expected abort, got {:?}", other.map(|r| r.losses)),
        }
    }
}
