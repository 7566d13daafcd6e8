use crate::linalg::{CVec, C64};
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// 2-D transform on row-major `iy * nx + ix` data: unnormalized forward,
/// inverse scaled by `1/N`, so that `F^H = N F⁻¹`.
#[derive(Clone)]
pub struct Fft2 {
    pub nx: usize,
    pub ny: usize,
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.nx, self.ny)
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut p = FftPlanner::new();
        Self { nx, ny, fx: p.plan_fft_forward(nx), ix: p.plan_fft_inverse(nx), fy: p.plan_fft_forward(ny), iy: p.plan_fft_inverse(ny) }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, x: &[C64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) -> CVec {
        let (nx, ny) = (self.nx, self.ny);
        let mut buf = x.to_vec();
        rows.process(&mut buf);
        if ny > 1 {
            let mut t = vec![C64::new(0.0, 0.0); nx * ny];
            for iy in 0..ny {
                for ix in 0..nx {
                    t[ix * ny + iy] = buf[iy * nx + ix];
                }
            }
            cols.process(&mut t);
            for iy in 0..ny {
                for ix in 0..nx {
                    buf[iy * nx + ix] = t[ix * ny + iy];
                }
            }
        }
        buf
    }

    pub fn forward(&self, x: &[C64]) -> CVec {
        self.run(x, &self.fx, &self.fy)
    }

    pub fn forward_real(&self, x: &[f64]) -> CVec {
        self.forward(&crate::linalg::to_complex(x))
    }

    pub fn inverse(&self, x: &[C64]) -> CVec {
        let s = 1.0 / self.len() as f64;
        let mut out = self.run(x, &self.ix, &self.iy);
        out.iter_mut().for_each(|v| *v *= s);
        out
    }
}
