//! Procedural face renderer. Each latent coordinate is squashed by tanh
//! into a geometric range, so every w is valid:
//!
//! | coord | meaning                     | midpoint | span |
//! |-------|-----------------------------|----------|------|
//! | w0    | face centre x (`cx`)        | 0.50     | 0.20 |
//! | w1    | face centre y (`cy`)        | 0.50     | 0.20 |
//! | w2    | face radius x (`rx`)        | 0.25     | 0.10 |
//! | w3    | face radius y (`ry`)        | 0.25     | 0.10 |
//! | w4    | eye separation (`e`)        | 0.45     | 0.15 |
//! | w5    | eye radius factor (`fe`)    | 0.12     | 0.05 |
//! | w6    | brightness (`b`)            | 0.65     | 0.25 |
//! | w7    | mouth width (`m`)           | 0.50     | 0.20 |
//!
//! Pixel centres are `u = (col + 0.5) / res` (horizontal) and
//! `v = (row + 0.5) / res` (vertical, downwards). Intensity is
//!
//! ```text
//! I = b * s(q_face) * (1 - 0.8 s(q_eyeL)) * (1 - 0.8 s(q_eyeR)) * (1 - 0.6 s(q_mouth))
//! s(q) = sigmoid(k (1 - q))
//! ```
//!
//! with eyes at `(cx -/+ e rx, cy - 0.35 ry)` of radius `fe rx` and the mouth
//! an ellipse at `(cx, cy + 0.4 ry)` with radii `(0.6 m rx, 0.12 ry)`.

use crate::numcore::{sigmoid, NumError, Tape, Tensor, Var};

pub const PARAM_RANGES: [(f64, f64); 8] = [
    (0.50, 0.20),
    (0.50, 0.20),
    (0.25, 0.10),
    (0.25, 0.10),
    (0.45, 0.15),
    (0.12, 0.05),
    (0.65, 0.25),
    (0.50, 0.20),
];
pub const SHARPNESS: f64 = 25.0;
pub const OOD_SHARPNESS: f64 = 60.0;
pub const OOD_FACE_EXPONENT: u32 = 4;
pub const OOD_RAMP: f64 = 0.15;
pub const EYE_DARKEN: f64 = 0.8;
pub const MOUTH_DARKEN: f64 = 0.6;
pub const EYE_RISE: f64 = 0.35;
pub const MOUTH_DROP: f64 = 0.4;
pub const MOUTH_RX: f64 = 0.6;
pub const MOUTH_RY: f64 = 0.12;

/// Rendering variant: edge sharpness, face-boundary exponent and an
/// optional horizontal background ramp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Style {
    pub sharpness: f64,
    /// 2 for an ellipse, 4 for a superellipse.
    pub face_exponent: u32,
    pub ramp: Option<f64>,
}

impl Style {
    pub const IN_DISTRIBUTION: Style = Style { sharpness: SHARPNESS, face_exponent: 2, ramp: None };
    pub const OOD: Style =
        Style { sharpness: OOD_SHARPNESS, face_exponent: OOD_FACE_EXPONENT, ramp: Some(OOD_RAMP) };
}

/// Geometric face parameters decoded from a latent vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceParams {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub eye_sep: f64,
    pub eye_radius: f64,
    pub brightness: f64,
    pub mouth: f64,
}

impl FaceParams {
    pub fn from_latent(w: &[f64]) -> Self {
        let p: Vec<f64> =
            PARAM_RANGES.iter().zip(w).map(|(&(mid, span), &x)| mid + span * x.tanh()).collect();
        Self {
            cx: p[0],
            cy: p[1],
            rx: p[2],
            ry: p[3],
            eye_sep: p[4],
            eye_radius: p[5],
            brightness: p[6],
            mouth: p[7],
        }
    }

    pub fn intensity(&self, u: f64, v: f64, style: &Style) -> f64 {
        let k = style.sharpness;
        let s = |q: f64| sigmoid(k * (1.0 - q));
        let pow = |x: f64| if style.face_exponent == 4 { (x * x) * (x * x) } else { x * x };
        let ellipse = |cx: f64, cy: f64, rx: f64, ry: f64| {
            ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2)
        };
        let face = s(pow((u - self.cx) / self.rx) + pow((v - self.cy) / self.ry));
        let eye_y = self.cy - EYE_RISE * self.ry;
        let er = self.eye_radius * self.rx;
        let dx = self.eye_sep * self.rx;
        let left = s(ellipse(self.cx - dx, eye_y, er, er));
        let right = s(ellipse(self.cx + dx, eye_y, er, er));
        let mouth = s(ellipse(
            self.cx,
            self.cy + MOUTH_DROP * self.ry,
            MOUTH_RX * self.mouth * self.rx,
            MOUTH_RY * self.ry,
        ));
        let mut i = self.brightness
            * face
            * (1.0 - EYE_DARKEN * left)
            * (1.0 - EYE_DARKEN * right)
            * (1.0 - MOUTH_DARKEN * mouth);
        if let Some(r) = style.ramp {
            i += r * u * (1.0 - face);
        }
        i
    }
}

/// Direct evaluation of one image, row-major.
pub fn render_pixels(w: &[f64], res: usize, style: &Style) -> Vec<f64> {
    let p = FaceParams::from_latent(w);
    let mut out = Vec::with_capacity(res * res);
    for row in 0..res {
        let v = (row as f64 + 0.5) / res as f64;
        for col in 0..res {
            let u = (col as f64 + 0.5) / res as f64;
            out.push(p.intensity(u, v, style));
        }
    }
    out
}

/// The same formula recorded on a tape. `w` is `[batch, 8]`; the result is
/// `[batch, res * res]`.
pub fn render_taped(tape: &mut Tape, w: Var, res: usize, style: &Style) -> Result<Var, NumError> {
    let shape = tape.shape(w).to_vec();
    if shape.len() != 2 || shape[1] != PARAM_RANGES.len() {
        return Err(NumError::shape("render", &shape, &[0, PARAM_RANGES.len()]));
    }
    let batch = shape[0];
    let npix = res * res;
    let t = tape.tanh(w);

    let ones_row = tape.constant(Tensor::full(&[1, npix], 1.0));
    // per-image parameter broadcast to [batch, npix]
    let mut params = Vec::with_capacity(PARAM_RANGES.len());
    for (k, &(mid, span)) in PARAM_RANGES.iter().enumerate() {
        let mut sel = Tensor::zeros(&[PARAM_RANGES.len(), 1]);
        sel.data_mut()[k] = 1.0;
        let sel = tape.constant(sel);
        let col = tape.matmul(t, sel)?;
        let col = tape.mul_const(col, span);
        let col = tape.add_const(col, mid);
        params.push(tape.matmul(col, ones_row)?);
    }
    let [cx, cy, rx, ry, e, fe, b, m] = params[..] else { unreachable!() };

    let mut u = Vec::with_capacity(batch * npix);
    let mut v = Vec::with_capacity(batch * npix);
    for _ in 0..batch {
        for row in 0..res {
            for col in 0..res {
                u.push((col as f64 + 0.5) / res as f64);
                v.push((row as f64 + 0.5) / res as f64);
            }
        }
    }
    let u = tape.constant(Tensor::new(vec![batch, npix], u)?);
    let v = tape.constant(Tensor::new(vec![batch, npix], v)?);
    let k = style.sharpness;

    let soft = |tape: &mut Tape, q: Var| {
        let a = tape.mul_const(q, -k);
        let a = tape.add_const(a, k);
        tape.sigmoid(a)
    };
    // ((a - c) / r)^2
    let sq_ratio = |tape: &mut Tape, a: Var, c: Var, r: Var| -> Result<Var, NumError> {
        let d = tape.sub(a, c)?;
        let inv = tape.recip(r);
        let x = tape.mul(d, inv)?;
        Ok(tape.square(x))
    };

    let mut fx = sq_ratio(tape, u, cx, rx)?;
    let mut fy = sq_ratio(tape, v, cy, ry)?;
    if style.face_exponent == 4 {
        fx = tape.square(fx);
        fy = tape.square(fy);
    }
    let qf = tape.add(fx, fy)?;
    let face = soft(tape, qf);

    let rise = tape.mul_const(ry, EYE_RISE);
    let eye_y = tape.sub(cy, rise)?;
    let er = tape.mul(fe, rx)?;
    let dx = tape.mul(e, rx)?;
    let left_x = tape.sub(cx, dx)?;
    let right_x = tape.add(cx, dx)?;
    let mut eyes = Vec::new();
    for ex in [left_x, right_x] {
        let a = sq_ratio(tape, u, ex, er)?;
        let bq = sq_ratio(tape, v, eye_y, er)?;
        let q = tape.add(a, bq)?;
        eyes.push(soft(tape, q));
    }

    let drop = tape.mul_const(ry, MOUTH_DROP);
    let my = tape.add(cy, drop)?;
    let mrx = tape.mul(m, rx)?;
    let mrx = tape.mul_const(mrx, MOUTH_RX);
    let mry = tape.mul_const(ry, MOUTH_RY);
    let a = sq_ratio(tape, u, cx, mrx)?;
    let bq = sq_ratio(tape, v, my, mry)?;
    let qm = tape.add(a, bq)?;
    let mouth = soft(tape, qm);

    // (1 - c * s)
    let darken = |tape: &mut Tape, s: Var, c: f64| {
        let x = tape.mul_const(s, -c);
        tape.add_const(x, 1.0)
    };
    let mut img = tape.mul(b, face)?;
    for eye in eyes {
        let d = darken(tape, eye, EYE_DARKEN);
        img = tape.mul(img, d)?;
    }
    let d = darken(tape, mouth, MOUTH_DARKEN);
    img = tape.mul(img, d)?;
    if let Some(r) = style.ramp {
        let outside = darken(tape, face, 1.0);
        let ramp = tape.mul_const(u, r);
        let bg = tape.mul(ramp, outside)?;
        img = tape.add(img, bg)?;
    }
    Ok(img)
}
