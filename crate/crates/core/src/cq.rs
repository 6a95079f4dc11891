//! BDF2 convolution quadrature: weights of `B(delta(zeta)/dt)` by contour
//! quadrature and FFT, discrete convolutions and the discrete positivity
//! check.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// `delta(zeta) = (1 - zeta) + (1 - zeta)^2 / 2`.
pub fn delta(zeta: Complex64) -> Complex64 {
    let d = Complex64::new(1.0, 0.0) - zeta;
    d + 0.5 * d * d
}

/// Relative tolerance on the imaginary part of computed weights.
pub const IMAG_TOL: f64 = 1e-8;

/// Contour radius and number of points of the trapezoidal rule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContourParams {
    pub radius: f64,
    pub points: usize,
}

impl ContourParams {
    /// Radius `eps^{1/(N+L)}` balancing the aliasing error `lambda^L`
    /// against the round-off amplification `lambda^{-N}`; both are then
    /// about `eps^{L/(N+L)}`.
    pub fn balanced(n_steps: usize, points: usize) -> Self {
        let n = n_steps.max(1) as f64;
        ContourParams { radius: 1e-16f64.powf(1.0 / (n + points as f64)), points }
    }

    /// Radius `eps^{1/(2N)}` with `L = 2N` points (`lambda^N = 1e-8`).
    pub fn classical(n_steps: usize) -> Self {
        let n = n_steps.max(1);
        ContourParams { radius: 1e-16f64.powf(1.0 / (2.0 * n as f64)), points: 2 * n }
    }

    /// Balanced radius with `L = 2N` points.
    pub fn default_for(n_steps: usize) -> Self {
        let n = n_steps.max(1);
        Self::balanced(n, (2 * n).max(n + 1))
    }

    pub fn validate(&self, n_steps: usize) -> Result<()> {
        if !(self.radius > 0.0 && self.radius < 1.0) {
            return Err(Error::InvalidArgument(format!("contour radius must lie in (0, 1), got {}", self.radius)));
        }
        if self.points < n_steps + 1 {
            return Err(Error::InvalidArgument(format!(
                "need at least N+1 = {} contour points, got {}",
                n_steps + 1,
                self.points
            )));
        }
        Ok(())
    }

    /// Laplace parameters `delta(lambda e^{-2 pi i l / L}) / dt` for
    /// `l = 0..=L/2` (the rest follow by conjugation).
    fn nodes(&self, dt: f64) -> Vec<Complex64> {
        (0..=self.points / 2)
            .map(|l| {
                let zeta = Complex64::from_polar(self.radius, -2.0 * PI * l as f64 / self.points as f64);
                delta(zeta) / dt
            })
            .collect()
    }
}

/// Convolution weights `B_0, ..., B_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CqWeights<T> {
    pub dt: f64,
    pub weights: Vec<T>,
}

impl<T> CqWeights<T> {
    pub fn n_steps(&self) -> usize {
        self.weights.len() - 1
    }
}

/// Inverse DFT along the contour of conjugate-symmetric samples
/// `y_0..=y_{L/2}`, scaled by `lambda^{-n}/L`; returns `n = 0..=N` and
/// the largest imaginary part met.
fn recombine(half: &[Complex64], params: &ContourParams, n_steps: usize, fft: &dyn rustfft::Fft<f64>) -> (Vec<f64>, f64) {
    let l = params.points;
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    for (i, y) in half.iter().enumerate() {
        buf[i] = *y;
        if i > 0 && i < l - i {
            buf[l - i] = y.conj();
        }
    }
    fft.process(&mut buf);
    let mut max_im = 0.0f64;
    let out = (0..=n_steps)
        .map(|n| {
            let v = buf[n] * (params.radius.powi(-(n as i32)) / l as f64);
            max_im = max_im.max(v.im.abs());
            v.re
        })
        .collect();
    (out, max_im)
}

fn symbol_error(s: Complex64) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        e @ Error::Symbol { .. } => e,
        e => Error::Symbol { re: s.re, im: s.im, msg: e.to_string() },
    }
}

fn check_residue(max_im: f64, max_re: f64) -> Result<()> {
    let rel = max_im / max_re.max(f64::MIN_POSITIVE);
    if rel > IMAG_TOL {
        return Err(Error::ImaginaryResidue { residue: rel });
    }
    Ok(())
}

fn validate(dt: f64, n_steps: usize, params: &ContourParams) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    params.validate(n_steps)
}

/// Weights of a scalar symbol with `symbol(conj s) = conj symbol(s)`.
pub fn compute_weights_scalar(
    symbol: impl Fn(Complex64) -> Result<Complex64> + Sync,
    dt: f64,
    n_steps: usize,
    params: &ContourParams,
) -> Result<CqWeights<f64>> {
    validate(dt, n_steps, params)?;
    let values: Vec<Complex64> = params
        .nodes(dt)
        .into_par_iter()
        .map(|s| symbol(s).map_err(symbol_error(s)))
        .collect::<Result<_>>()?;
    let fft = FftPlanner::new().plan_fft_inverse(params.points);
    let (weights, max_im) = recombine(&values, params, n_steps, fft.as_ref());
    check_residue(max_im, weights.iter().fold(0.0f64, |m, w| m.max(w.abs())))?;
    Ok(CqWeights { dt, weights })
}

/// Weights of a matrix-valued symbol with `symbol(conj s) = conj symbol(s)`.
/// `memory_cap` bounds the bytes held by the contour samples and weights.
pub fn compute_weights_matrix(
    symbol: impl Fn(Complex64) -> Result<DMatrix<Complex64>> + Sync,
    dims: (usize, usize),
    dt: f64,
    n_steps: usize,
    params: &ContourParams,
    memory_cap: usize,
) -> Result<CqWeights<DMatrix<f64>>> {
    validate(dt, n_steps, params)?;
    let (r, c) = dims;
    let need = r * c * ((params.points / 2 + 1) * 16 + (n_steps + 1) * 8);
    if need > memory_cap {
        return Err(Error::Resource(format!(
            "convolution weights need about {} MiB, above the cap of {} MiB",
            need >> 20,
            memory_cap >> 20
        )));
    }
    let nodes = params.nodes(dt);
    let values: Vec<DMatrix<Complex64>> = nodes
        .par_iter()
        .map(|&s| {
            let m = symbol(s).map_err(symbol_error(s))?;
            if m.shape() != dims {
                return Err(Error::Dimension { expected: r * c, got: m.len() });
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let fft = FftPlanner::new().plan_fft_inverse(params.points);
    let mut weights = vec![DMatrix::zeros(r, c); n_steps + 1];
    let mut max_im = 0.0f64;
    let mut max_re = 0.0f64;
    let mut half = vec![Complex64::new(0.0, 0.0); values.len()];
    for j in 0..c {
        for i in 0..r {
            for (h, v) in half.iter_mut().zip(&values) {
                *h = v[(i, j)];
            }
            let (w, im) = recombine(&half, params, n_steps, fft.as_ref());
            max_im = max_im.max(im);
            for (n, x) in w.into_iter().enumerate() {
                max_re = max_re.max(x.abs());
                weights[n][(i, j)] = x;
            }
        }
    }
    check_residue(max_im, max_re)?;
    Ok(CqWeights { dt, weights })
}

/// `sum_{j=0}^{n} B_{n-j} w_j` for scalar weights.
pub fn discrete_convolution(weights: &CqWeights<f64>, samples: &[f64], n: usize) -> Result<f64> {
    if n > weights.n_steps() || n >= samples.len() {
        return Err(Error::Dimension { expected: n + 1, got: samples.len().min(weights.weights.len()) });
    }
    Ok((0..=n).map(|j| weights.weights[n - j] * samples[j]).sum())
}

/// `sum_{j=0}^{n} B_{n-j} w_j` for matrix weights.
pub fn discrete_convolution_matrix(
    weights: &CqWeights<DMatrix<f64>>,
    samples: &[DVector<f64>],
    n: usize,
) -> Result<DVector<f64>> {
    if n > weights.n_steps() || n >= samples.len() {
        return Err(Error::Dimension { expected: n + 1, got: samples.len().min(weights.weights.len()) });
    }
    let cols = weights.weights[0].ncols();
    let mut out = DVector::zeros(weights.weights[0].nrows());
    for j in 0..=n {
        if samples[j].len() != cols {
            return Err(Error::Dimension { expected: cols, got: samples[j].len() });
        }
        out.gemv(1.0, &weights.weights[n - j], &samples[j], 1.0);
    }
    Ok(out)
}

/// Weighted sums of the discrete positivity property:
/// `lhs = dt sum_n rho^{2n} w_n . (B(d_t) w)_n` with `rho = exp(-dt/T)`,
/// together with `dt sum_n rho^{2n} |w_n|^2` and a magnitude scale.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HerglotzCheck {
    pub lhs: f64,
    pub weighted_norm_sq: f64,
    pub scale: f64,
}

pub fn check_discrete_herglotz(
    weights: &CqWeights<DMatrix<f64>>,
    sequence: &[DVector<f64>],
    horizon: f64,
) -> Result<HerglotzCheck> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon T must be positive".into()));
    }
    let dt = weights.dt;
    let rho2 = (-2.0 * dt / horizon).exp();
    let (mut lhs, mut norm, mut scale) = (0.0, 0.0, 0.0);
    let mut w = 1.0;
    for n in 0..sequence.len() {
        let y = discrete_convolution_matrix(weights, sequence, n)?;
        lhs += w * sequence[n].dot(&y);
        norm += w * sequence[n].norm_squared();
        scale += w * sequence[n].norm() * y.norm();
        w *= rho2;
    }
    Ok(HerglotzCheck { lhs: dt * lhs, weighted_norm_sq: dt * norm, scale: dt * scale })
}

const CACHE_MAGIC: &[u8; 8] = b"EMCQW001";

/// Write matrix weights in a little-endian binary format.
pub fn save_weights(weights: &CqWeights<DMatrix<f64>>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CACHE_MAGIC)?;
    let (r, c) = weights.weights[0].shape();
    for v in [weights.weights.len() as u64, r as u64, c as u64] {
        f.write_all(&v.to_le_bytes())?;
    }
    f.write_all(&weights.dt.to_le_bytes())?;
    for w in &weights.weights {
        for x in w.iter() {
            f.write_all(&x.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<CqWeights<DMatrix<f64>>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::InvalidArgument("not a weight cache file".into()));
    }
    let mut b8 = [0u8; 8];
    let mut u = || -> Result<u64> {
        f.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let (n, r, c) = (u()? as usize, u()? as usize, u()? as usize);
    let dt = f64::from_bits(u()?);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let mut data = vec![0.0; r * c];
        for x in data.iter_mut() {
            *x = f64::from_bits(u()?);
        }
        weights.push(DMatrix::from_vec(r, c, data));
    }
    Ok(CqWeights { dt, weights })
}

/// `|(symbol(d_t) w)(1) - exact|` with `n = 1/dt` steps, `w` sampled at
/// `t_j = j dt`.
pub fn convolution_error_at_one(
    symbol: impl Fn(Complex64) -> Complex64 + Sync,
    w: impl Fn(f64) -> f64,
    exact: f64,
    dt: f64,
) -> Result<f64> {
    let n = (1.0 / dt).round() as usize;
    let weights = compute_weights_scalar(|s| Ok(symbol(s)), dt, n, &ContourParams::default_for(n))?;
    let samples: Vec<f64> = (0..=n).map(|j| w(j as f64 * dt)).collect();
    Ok((discrete_convolution(&weights, &samples, n)? - exact).abs())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CqOrderCheck {
    pub name: String,
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log2(e_k / e_{k+1})` per halving.
    pub orders: Vec<f64>,
}

/// Order checks on inputs that vanish at `t = 0` with their first
/// derivative: the symbol `s` on `t^3` and `1/s` on `1 - cos t`.
pub fn cq_order_checks(dts: &[f64]) -> Result<Vec<CqOrderCheck>> {
    let check = |name: &str, errors: Vec<f64>| CqOrderCheck {
        name: name.to_string(),
        dts: dts.to_vec(),
        orders: errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect(),
        errors,
    };
    let d = dts.iter().map(|&dt| convolution_error_at_one(|s| s, |t| t * t * t, 3.0, dt)).collect::<Result<_>>()?;
    let i = dts
        .iter()
        .map(|&dt| convolution_error_at_one(|s| 1.0 / s, |t| 1.0 - t.cos(), 1.0 - 1f64.sin(), dt))
        .collect::<Result<_>>()?;
    Ok(vec![check("derivative of t^3", d), check("integral of 1 - cos t", i)])
}
