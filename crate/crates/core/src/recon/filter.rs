//! Projection pre-weighting and ramp filtering.

use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScanGeometry;
use crate::image::{Image2D, ProjectionStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RampFilter {
    #[default]
    SheppLogan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub cosine: bool,
    /// Short-scan weighting. When disabled every ray gets weight 1/2, which
    /// is the right normalization for a full 360° orbit.
    pub parker: bool,
    /// Mirrored samples added on each side of a row before filtering.
    /// `None` uses half the detector width.
    pub truncation_padding: Option<usize>,
    pub ramp: RampFilter,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            cosine: true,
            parker: true,
            truncation_padding: None,
            ramp: RampFilter::SheppLogan,
        }
    }
}

impl FilterConfig {
    /// Only the ramp filter, no weighting and no padding.
    pub fn ramp_only() -> Self {
        FilterConfig {
            cosine: false,
            parker: false,
            truncation_padding: Some(0),
            ramp: RampFilter::SheppLogan,
        }
    }

    pub fn padding_for(&self, cols: usize) -> usize {
        self.truncation_padding.unwrap_or(cols / 2)
    }
}

/// Discrete Shepp–Logan kernel at integer offset `n` for sample spacing
/// `tau` (m): `-2 / (π² τ² (4n² - 1))`.
pub fn shepp_logan_kernel(n: i64, tau: f64) -> f64 {
    let n = n as f64;
    -2.0 / (PI * PI * tau * tau * (4.0 * n * n - 1.0))
}

/// Parker's short-scan weight for source angle `beta` in `[0, π + 2δ]` and
/// fan angle `gamma` in `[-δ, δ]`. Conjugate rays `(β, γ)` and
/// `(β + π + 2γ, -γ)` have weights summing to one.
pub fn parker_weight(beta: f64, gamma: f64, delta: f64) -> f64 {
    if beta < 0.0 || beta > PI + 2.0 * delta {
        return 0.0;
    }
    if beta < 2.0 * (delta - gamma) {
        let s = (FRAC_PI_4 * beta / (delta - gamma)).sin();
        s * s
    } else if beta <= PI - 2.0 * gamma {
        1.0
    } else {
        let s = (FRAC_PI_4 * (PI + 2.0 * delta - beta) / (delta + gamma)).sin();
        s * s
    }
}

/// Column fan angle for the detector convention of [`ScanGeometry`].
pub fn column_fan_angle(geom: &ScanGeometry, u: usize) -> f64 {
    let (cu, _) = geom.principal_point();
    ((u as f64 - cu) * geom.pixel / geom.sdd).atan()
}

/// Half-width of the fan that the scanned arc can accommodate. Views sit at
/// the midpoints of their angular bins, so the arc spans `n · inc`.
fn short_scan_delta(geom: &ScanGeometry) -> Result<f64> {
    let arc = geom.total_arc();
    let required = PI + geom.fan_angle();
    if arc < required - 1e-12 {
        return Err(Error::ShortScanInfeasible {
            arc_deg: arc.to_degrees(),
            required_deg: required.to_degrees(),
        });
    }
    Ok((arc - PI) * 0.5)
}

/// Parker weights of view `i`, one per detector column.
pub fn parker_row(geom: &ScanGeometry, i: usize) -> Result<Vec<f64>> {
    let delta = short_scan_delta(geom)?;
    let beta = (i as f64 + 0.5) * geom.angular_increment;
    Ok((0..geom.det_cols)
        .map(|u| parker_weight(beta, -column_fan_angle(geom, u), delta))
        .collect())
}

/// Cosine pre-weights `sdd / sqrt(sdd² + u'² + v'²)` with physical offsets.
pub fn cosine_weights(geom: &ScanGeometry) -> Image2D {
    let (cu, cv) = geom.principal_point();
    Image2D::from_fn(geom.det_cols, geom.det_rows, |u, v| {
        let du = (u as f64 - cu) * geom.pixel;
        let dv = (v as f64 - cv) * geom.pixel;
        geom.sdd / (geom.sdd * geom.sdd + du * du + dv * dv).sqrt()
    })
}

/// Row convolution with the ramp kernel through a zero-padded FFT.
pub struct RampPlan {
    cols: usize,
    pad: usize,
    n_fft: usize,
    tau: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel: Vec<Complex<f64>>,
}

impl RampPlan {
    /// `tau` is the detector sampling distance scaled to the isocenter.
    pub fn new(cols: usize, pad: usize, tau: f64) -> Self {
        let len = cols + 2 * pad;
        let n_fft = (2 * len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_fft);
        let inverse = planner.plan_fft_inverse(n_fft);
        let mut kernel = vec![Complex::new(0.0, 0.0); n_fft];
        for n in 0..len {
            let h = shepp_logan_kernel(n as i64, tau);
            kernel[n].re = h;
            if n > 0 {
                kernel[n_fft - n].re = h;
            }
        }
        forward.process(&mut kernel);
        RampPlan {
            cols,
            pad,
            n_fft,
            tau,
            forward,
            inverse,
            kernel,
        }
    }

    fn load(&self, row: &[f64], scratch: &mut [Complex<f64>], imag: bool) {
        let (cols, pad) = (self.cols, self.pad);
        let put = |c: &mut Complex<f64>, x: f64| {
            if imag {
                c.im = x
            } else {
                c.re = x
            }
        };
        for (k, &x) in row.iter().enumerate() {
            put(&mut scratch[pad + k], x);
        }
        for k in 0..pad {
            // mirrored edges, the edge sample itself is repeated
            let k_in = k.min(cols - 1);
            put(&mut scratch[pad - 1 - k], row[k_in]);
            put(&mut scratch[pad + cols + k], row[cols - 1 - k_in]);
        }
    }

    /// Filters one or two rows in place. The kernel is real and even, so its
    /// spectrum is real and a second row can ride along in the imaginary part.
    fn filter_rows(&self, a: &mut [f64], b: Option<&mut [f64]>, scratch: &mut [Complex<f64>]) {
        scratch.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        self.load(a, scratch, false);
        if let Some(b) = &b {
            self.load(b, scratch, true);
        }
        self.forward.process(scratch);
        for (s, h) in scratch.iter_mut().zip(&self.kernel) {
            *s *= h.re;
        }
        self.inverse.process(scratch);
        let scale = self.tau / self.n_fft as f64;
        let pad = self.pad;
        for (k, x) in a.iter_mut().enumerate() {
            *x = scratch[pad + k].re * scale;
        }
        if let Some(b) = b {
            for (k, x) in b.iter_mut().enumerate() {
                *x = scratch[pad + k].im * scale;
            }
        }
    }

    pub fn filter_image(&self, image: &mut Image2D) {
        let mut scratch = vec![Complex::new(0.0, 0.0); self.n_fft];
        let cols = image.cols;
        let mut rows = image.data.chunks_mut(cols);
        while let Some(a) = rows.next() {
            self.filter_rows(a, rows.next(), &mut scratch);
        }
    }
}

/// Cosine weighting, Parker weighting, mirrored truncation padding and
/// Shepp–Logan filtering of every view.
pub fn preweight_and_filter(stack: &ProjectionStack, geom: &ScanGeometry, cfg: &FilterConfig) -> Result<ProjectionStack> {
    if stack.views() != geom.n_proj || stack.cols != geom.det_cols || stack.rows != geom.det_rows {
        return Err(Error::Shape(format!(
            "stack {}x{}x{} does not match geometry {}x{}x{}",
            stack.views(),
            stack.cols,
            stack.rows,
            geom.n_proj,
            geom.det_cols,
            geom.det_rows
        )));
    }
    let cosine = cfg.cosine.then(|| cosine_weights(geom));
    let parker: Option<Vec<Vec<f64>>> = if cfg.parker {
        Some((0..geom.n_proj).map(|i| parker_row(geom, i)).collect::<Result<_>>()?)
    } else {
        None
    };
    let tau = geom.pixel * geom.sid / geom.sdd;
    let plan = RampPlan::new(stack.cols, cfg.padding_for(stack.cols), tau);
    let images = stack
        .images
        .par_iter()
        .enumerate()
        .map(|(i, im)| {
            let mut out = im.clone();
            if let Some(c) = &cosine {
                out.data.iter_mut().zip(&c.data).for_each(|(x, w)| *x *= w);
            }
            match &parker {
                Some(p) => {
                    for v in 0..out.rows {
                        out.row_mut(v).iter_mut().zip(&p[i]).for_each(|(x, w)| *x *= w);
                    }
                }
                None => out.data.iter_mut().for_each(|x| *x *= 0.5),
            }
            plan.filter_image(&mut out);
            out
        })
        .collect();
    Ok(ProjectionStack {
        cols: stack.cols,
        rows: stack.rows,
        pixel: stack.pixel,
        images,
    })
}
