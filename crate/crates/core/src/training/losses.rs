//! Loss functions, each as a taped builder plus a plain evaluation.
//!
//! All losses are mean-normalised over batch and elements.

use super::TrainError;
use crate::generators::{Image, LatentVector};
use crate::models::{discriminator_forward, Network};
use crate::numcore::{NumError, Tape, Tensor, Var};

/// log arguments are clamped to this floor.
pub const LOG_FLOOR: f64 = 1e-12;

fn mean_sq_diff(tape: &mut Tape, a: Var, b: Var) -> Result<Var, NumError> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Mean over batch and coordinates of `(pred - target)^2`.
pub fn latent_loss_taped(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, NumError> {
    mean_sq_diff(tape, pred, target)
}

/// Mean squared pixel error over batch and pixels.
pub fn reconstruction_loss_taped(tape: &mut Tape, recon: Var, x: Var) -> Result<Var, NumError> {
    mean_sq_diff(tape, recon, x)
}

fn eval_pair(a: Tensor, b: Tensor) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a), tape.constant(b));
    let l = mean_sq_diff(&mut tape, va, vb)?;
    Ok(tape.value(l).item()?)
}

pub fn latent_loss(pred: &[LatentVector], target: &[LatentVector]) -> Result<f64, TrainError> {
    if pred.len() != target.len() {
        return Err(NumError::shape("latent_loss", &[pred.len()], &[target.len()]).into());
    }
    eval_pair(LatentVector::batch_tensor(pred)?, LatentVector::batch_tensor(target)?)
}

pub fn reconstruction_loss(recon: &[Image], x: &[Image]) -> Result<f64, TrainError> {
    if recon.len() != x.len() {
        return Err(NumError::shape("reconstruction_loss", &[recon.len()], &[x.len()]).into());
    }
    eval_pair(Image::batch_tensor(recon)?, Image::batch_tensor(x)?)
}

/// `-mean(log s(real)) - mean(log(1 - s(fake)))`.
pub fn gan_d_loss_taped(tape: &mut Tape, real: Var, fake: Var) -> Result<Var, NumError> {
    let sr = tape.sigmoid(real);
    let lr = tape.ln_clamped(sr, LOG_FLOOR);
    let mr = tape.mean(lr);
    let sf = tape.sigmoid(fake);
    let one_minus = tape.mul_const(sf, -1.0);
    let one_minus = tape.add_const(one_minus, 1.0);
    let lf = tape.ln_clamped(one_minus, LOG_FLOOR);
    let mf = tape.mean(lf);
    let s = tape.add(mr, mf)?;
    Ok(tape.mul_const(s, -1.0))
}

/// Non-saturating generator loss `-mean(log s(fake))`.
pub fn gan_g_loss_taped(tape: &mut Tape, fake: Var) -> Var {
    let s = tape.sigmoid(fake);
    let l = tape.ln_clamped(s, LOG_FLOOR);
    let m = tape.mean(l);
    tape.mul_const(m, -1.0)
}

fn logits(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len(), 1], v.to_vec()).expect("column")
}

pub fn gan_d_loss(real: &[f64], fake: &[f64]) -> Result<f64, TrainError> {
    if real.iter().chain(fake).any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteInput("discriminator logits".into()));
    }
    let mut tape = Tape::new();
    let (r, f) = (tape.constant(logits(real)), tape.constant(logits(fake)));
    let l = gan_d_loss_taped(&mut tape, r, f)?;
    Ok(tape.value(l).item()?)
}

pub fn gan_g_loss(fake: &[f64]) -> Result<f64, TrainError> {
    if fake.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteInput("discriminator logits".into()));
    }
    let mut tape = Tape::new();
    let f = tape.constant(logits(fake));
    let l = gan_g_loss_taped(&mut tape, f);
    Ok(tape.value(l).item()?)
}

/// Mean over taps of the mean absolute difference between the batch-mean
/// real features and batch-mean fake features.
pub fn feature_matching_taped(
    tape: &mut Tape,
    real_taps: &[Var],
    fake_taps: &[Var],
) -> Result<Var, NumError> {
    if real_taps.len() != fake_taps.len() || real_taps.is_empty() {
        return Err(NumError::shape("feature_matching", &[real_taps.len()], &[fake_taps.len()]));
    }
    let mut total: Option<Var> = None;
    for (&r, &f) in real_taps.iter().zip(fake_taps) {
        if tape.shape(r)[1..] != tape.shape(f)[1..] {
            return Err(NumError::shape("feature_matching", tape.shape(r), tape.shape(f)));
        }
        let mr = tape.mean_rows(r)?;
        let mf = tape.mean_rows(f)?;
        let d = tape.sub(mr, mf)?;
        let a = tape.abs(d);
        let m = tape.mean(a);
        total = Some(match total {
            Some(t) => tape.add(t, m)?,
            None => m,
        });
    }
    Ok(tape.mul_const(total.expect("non-empty"), 1.0 / real_taps.len() as f64))
}

/// Feature matching through discriminator `d` for two image batches.
pub fn feature_matching_loss(d: &Network, x_real: &Tensor, x_fake: &Tensor) -> Result<f64, TrainError> {
    if x_real.shape() != x_fake.shape() {
        return Err(NumError::shape("feature_matching", x_real.shape(), x_fake.shape()).into());
    }
    let mut tape = Tape::new();
    let bound = d.params.bind(&mut tape, false);
    let r = tape.constant(x_real.clone());
    let f = tape.constant(x_fake.clone());
    let (_, rt) = discriminator_forward(d, &mut tape, &bound, r)?;
    let (_, ft) = discriminator_forward(d, &mut tape, &bound, f)?;
    let l = feature_matching_taped(&mut tape, &rt, &ft)?;
    Ok(tape.value(l).item()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::LatentKind;
    use crate::models::NetworkSpec;
    use crate::rng::SplitMix64;

    fn lat(rows: &[&[f64]]) -> Vec<LatentVector> {
        rows.iter().map(|r| LatentVector::new(LatentKind::W, r.to_vec())).collect()
    }

    #[test]
    fn latent_loss_examples() {
        let t = lat(&[&[0.5, -1.0, 2.0], &[0.0, 0.3, 0.1]]);
        assert_eq!(latent_loss(&t, &t).unwrap(), 0.0);
        let shifted: Vec<_> = t
            .iter()
            .map(|l| LatentVector::new(LatentKind::W, l.values().iter().map(|v| v + 1.0).collect()))
            .collect();
        assert!((latent_loss(&shifted, &t).unwrap() - 1.0).abs() < 1e-15);
        let p = lat(&[&[0.1, 0.2, 0.3], &[1.0, 0.0, -1.0]]);
        let dup_p: Vec<_> = p.iter().chain(&p).cloned().collect();
        let dup_t: Vec<_> = t.iter().chain(&t).cloned().collect();
        let (single, doubled) = (latent_loss(&p, &t).unwrap(), latent_loss(&dup_p, &dup_t).unwrap());
        assert!((single - doubled).abs() <= 1e-15 * single);
        assert!(latent_loss(&p[..1], &t).is_err());
        assert_eq!(latent_loss(&p, &t).unwrap(), latent_loss(&t, &p).unwrap());
    }

    #[test]
    fn reconstruction_loss_examples() {
        let a = Image::filled(4, 4, 0.3).unwrap();
        assert_eq!(reconstruction_loss(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 0.0);
        let z = Image::filled(4, 4, 0.0).unwrap();
        let o = Image::filled(4, 4, 1.0).unwrap();
        assert_eq!(reconstruction_loss(&[z], &[o]).unwrap(), 1.0);
        let half = Image::from_fn(4, 4, |r, _| if r < 2 { 0.5 } else { 0.3 }).unwrap();
        let l = reconstruction_loss(&[half], std::slice::from_ref(&a)).unwrap();
        assert!((l - 0.02).abs() < 1e-15, "{l}");
        assert!(reconstruction_loss(std::slice::from_ref(&a), &[Image::filled(2, 2, 0.3).unwrap()]).is_err());
    }

    #[test]
    fn gan_loss_examples() {
        let d = gan_d_loss(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d - 1.3863).abs() < 1e-4);
        assert!(gan_g_loss(&[40.0]).unwrap() < 1e-15);
        assert!(gan_g_loss(&[5.0]).unwrap() < gan_g_loss(&[1.0]).unwrap());
        // swapping roles of a (x, -x) pair is symmetric only at x = 0
        let a = gan_d_loss(&[1.0], &[-1.0]).unwrap();
        let b = gan_d_loss(&[-1.0], &[1.0]).unwrap();
        assert!((a - 2.0 * (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((b - 2.0 * (1.0 + 1.0f64.exp()).ln()).abs() < 1e-12);
        assert!((a - b).abs() > 1.0);
        assert_eq!(gan_d_loss(&[0.0], &[0.0]).unwrap(), gan_d_loss(&[-0.0], &[0.0]).unwrap());
        // clamped logs stay finite for saturated logits
        assert!(gan_d_loss(&[-800.0], &[800.0]).unwrap().is_finite());
        assert!(gan_d_loss(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn feature_matching_examples() {
        let mut tape = Tape::new();
        let mut rng = SplitMix64::new(3);
        let data: Vec<f64> = (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let real = tape.constant(Tensor::new(vec![2, 3, 2, 2], data.clone()).unwrap());
        let fake = tape.constant(
            Tensor::new(vec![2, 3, 2, 2], data.iter().map(|v| v + 0.3).collect()).unwrap(),
        );
        let l = feature_matching_taped(&mut tape, &[real], &[fake]).unwrap();
        assert!((tape.value(l).item().unwrap() - 0.3).abs() < 1e-12);
        let same = feature_matching_taped(&mut tape, &[real, real], &[real, real]).unwrap();
        assert_eq!(tape.value(same).item().unwrap(), 0.0);

        let d = Network::new(NetworkSpec::discriminator(32), 1).unwrap();
        let x: Vec<f64> = (0..2 * 1024).map(|_| rng.next_f64()).collect();
        let x = Tensor::new(vec![2, 1, 32, 32], x).unwrap();
        let y: Vec<f64> = (0..2 * 1024).map(|_| rng.next_f64()).collect();
        let y = Tensor::new(vec![2, 1, 32, 32], y).unwrap();
        assert_eq!(feature_matching_loss(&d, &x, &x).unwrap(), 0.0);
        assert!(feature_matching_loss(&d, &x, &y).unwrap() >= 0.0);
    }
}
