//! Detector images and projection stacks.
//!
//! Pixel `(u, v)` addresses column `u`, row `v`; integer coordinates are
//! pixel centers, matching the principal-point convention in
//! [`crate::geometry`].

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub cols: usize,
    pub rows: usize,
    /// Row-major samples, `data[v * cols + u]`.
    pub data: Vec<f64>,
}

impl Image2D {
    pub fn zeros(cols: usize, rows: usize) -> Self {
        Image2D {
            cols,
            rows,
            data: vec![0.0; cols * rows],
        }
    }

    pub fn from_fn(cols: usize, rows: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(cols * rows);
        for v in 0..rows {
            for u in 0..cols {
                data.push(f(u, v));
            }
        }
        Image2D { cols, rows, data }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.cols + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.cols + u] = value;
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.cols..(v + 1) * self.cols]
    }

    pub fn row_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.data[v * self.cols..(v + 1) * self.cols]
    }

    /// Bilinear sample; locations outside the pixel-center lattice read 0.
    #[inline]
    pub fn bilinear_zero(&self, u: f64, v: f64) -> f64 {
        let umax = (self.cols - 1) as f64;
        let vmax = (self.rows - 1) as f64;
        if !(u >= 0.0 && v >= 0.0 && u <= umax && v <= vmax) {
            return 0.0;
        }
        let u0 = (u as usize).min(self.cols.saturating_sub(2));
        let v0 = (v as usize).min(self.rows.saturating_sub(2));
        if self.cols < 2 || self.rows < 2 {
            return self.bilinear_clamped(u, v);
        }
        let (fu, fv) = (u - u0 as f64, v - v0 as f64);
        let i = v0 * self.cols + u0;
        let d = &self.data;
        let top = d[i] + fu * (d[i + 1] - d[i]);
        let bot = d[i + self.cols] + fu * (d[i + self.cols + 1] - d[i + self.cols]);
        top + fv * (bot - top)
    }

    /// Bilinear sample with clamp-to-edge outside the image.
    #[inline]
    pub fn bilinear_clamped(&self, u: f64, v: f64) -> f64 {
        let umax = (self.cols - 1) as f64;
        let vmax = (self.rows - 1) as f64;
        let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, umax) };
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, vmax) };
        let u0 = u.floor() as usize;
        let v0 = v.floor() as usize;
        let u1 = (u0 + 1).min(self.cols - 1);
        let v1 = (v0 + 1).min(self.rows - 1);
        let (fu, fv) = (u - u0 as f64, v - v0 as f64);
        let a = self.get(u0, v0);
        let b = self.get(u1, v0);
        let c = self.get(u0, v1);
        let e = self.get(u1, v1);
        let top = a + fu * (b - a);
        let bot = c + fu * (e - c);
        top + fv * (bot - top)
    }

    pub fn max_abs_diff(&self, other: &Image2D) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}

/// One detector image per view, all of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub cols: usize,
    pub rows: usize,
    /// Isotropic pixel pitch (m).
    pub pixel: f64,
    pub images: Vec<Image2D>,
}

impl ProjectionStack {
    pub fn zeros(views: usize, cols: usize, rows: usize, pixel: f64) -> Self {
        ProjectionStack {
            cols,
            rows,
            pixel,
            images: vec![Image2D::zeros(cols, rows); views],
        }
    }

    pub fn from_images(images: Vec<Image2D>, pixel: f64) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("projection stack needs at least one view".into()))?;
        let (cols, rows) = (first.cols, first.rows);
        if images.iter().any(|im| im.cols != cols || im.rows != rows) {
            return Err(Error::Shape("projection images differ in size".into()));
        }
        Ok(ProjectionStack {
            cols,
            rows,
            pixel,
            images,
        })
    }

    pub fn views(&self) -> usize {
        self.images.len()
    }

    pub fn scaled(&self, a: f64) -> ProjectionStack {
        let mut out = self.clone();
        for im in &mut out.images {
            im.data.iter_mut().for_each(|x| *x *= a);
        }
        out
    }
}
