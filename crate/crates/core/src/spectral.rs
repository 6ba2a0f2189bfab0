//! 2D discrete Fourier transforms, mode truncation and spectral weights.
//!
//! Conventions: the forward transform is unnormalized,
//! `X[k, l] = sum_{i,j} x[i, j] exp(-2 pi i (k i / H + l j / W))`, and the
//! inverse carries the `1 / (H W)` factor. Real fields use a half spectrum of
//! `W / 2 + 1` columns. The 1D passes are delegated to `rustfft`; the naive
//! DFT here is the independent oracle the fast path is tested against.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, ScalarGrid};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Signed integer frequency of FFT index `k` on an axis of length `n`.
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Number of stored columns in the half spectrum of a width-`w` real field.
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Multiplicity of half-spectrum column `ky` in the full spectrum: the zero
/// column (and the Nyquist column for even widths) appear once, every other
/// column stands in for itself and its conjugate partner.
pub fn hermitian_weight(ky: usize, w: usize) -> f64 {
    if ky == 0 || (w % 2 == 0 && ky == w / 2) {
        1.0
    } else {
        2.0
    }
}

/// Direct O((HW)^2) evaluation of the forward transform.
pub fn dft2_naive(x: &ComplexGrid) -> ComplexGrid {
    let (h, w) = x.shape();
    let mut out = ComplexGrid::zeros(h, w);
    for k in 0..h {
        for l in 0..w {
            let mut acc = ZERO;
            for i in 0..h {
                for j in 0..w {
                    // Reduce the phase index exactly before converting to an angle.
                    let phase = ((k * i) % h) as f64 / h as f64 + ((l * j) % w) as f64 / w as f64;
                    acc += x.get(i, j) * Complex64::from_polar(1.0, -2.0 * PI * phase);
                }
            }
            out.set(k, l, acc);
        }
    }
    out
}

fn transform_rows(data: &mut [Complex64], w: usize, direction: FftDirection) {
    plan(w, direction).process(data);
}

fn transform_cols(
    data: &mut [Complex64],
    h: usize,
    stride: usize,
    ncols: usize,
    direction: FftDirection,
) {
    let fft = plan(h, direction);
    let mut col = vec![ZERO; h];
    for c in 0..ncols {
        for (i, v) in col.iter_mut().enumerate() {
            *v = data[i * stride + c];
        }
        fft.process(&mut col);
        for (i, v) in col.iter().enumerate() {
            data[i * stride + c] = *v;
        }
    }
}

pub fn fft2(x: &ComplexGrid) -> ComplexGrid {
    let (h, w) = x.shape();
    let mut data = x.data().to_vec();
    transform_rows(&mut data, w, FftDirection::Forward);
    transform_cols(&mut data, h, w, w, FftDirection::Forward);
    ComplexGrid::from_raw(h, w, data)
}

pub fn ifft2(x: &ComplexGrid) -> ComplexGrid {
    let (h, w) = x.shape();
    let mut data = x.data().to_vec();
    transform_rows(&mut data, w, FftDirection::Inverse);
    transform_cols(&mut data, h, w, w, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    data.iter_mut().for_each(|v| *v *= scale);
    ComplexGrid::from_raw(h, w, data)
}

/// Half spectrum of a real `h x w` field. Only the first `ncols` columns get
/// the column pass; the rest are left zero.
pub(crate) fn rfft2_cols(x: &[f64], h: usize, w: usize, ncols: usize) -> Vec<Complex64> {
    let half = half_width(w);
    let mut out = vec![ZERO; h * half];
    let fft = plan(w, FftDirection::Forward);
    let mut row = vec![ZERO; w];
    for i in 0..h {
        for (dst, &src) in row.iter_mut().zip(&x[i * w..(i + 1) * w]) {
            *dst = Complex64::new(src, 0.0);
        }
        fft.process(&mut row);
        out[i * half..i * half + ncols].copy_from_slice(&row[..ncols]);
    }
    transform_cols(&mut out, h, half, ncols, FftDirection::Forward);
    out
}

/// Inverse of the half spectrum, assuming columns `ncols..` are zero.
///
/// Equal to `(1/HW) sum_k c(k_y) Re(X[k] e^{+i theta})` with `c` from
/// [`hermitian_weight`], for any input (Hermitian or not) on the zero and
/// Nyquist columns.
pub(crate) fn irfft2_cols(spec: &[Complex64], h: usize, w: usize, ncols: usize) -> Vec<f64> {
    let half = half_width(w);
    let mut work = spec.to_vec();
    transform_cols(&mut work, h, half, ncols, FftDirection::Inverse);
    let fft = plan(w, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    let mut row = vec![ZERO; w];
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let src = &work[i * half..(i + 1) * half];
        row.fill(ZERO);
        row[..ncols].copy_from_slice(&src[..ncols]);
        for l in half..w {
            if w - l < ncols {
                row[l] = src[w - l].conj();
            }
        }
        fft.process(&mut row);
        for (dst, v) in out[i * w..(i + 1) * w].iter_mut().zip(&row) {
            *dst = v.re * scale;
        }
    }
    out
}

/// Half spectrum of a real field: `W / 2 + 1` columns, all rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumHalf {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl SpectrumHalf {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * half_width(width) {
            return Err(Error::shape(format!(
                "half spectrum of a {height}x{width} field needs {} entries, got {}",
                height * half_width(width),
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![ZERO; height * half_width(width)],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Width of the real field this spectrum represents.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn half_width(&self) -> usize {
        half_width(self.width)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, kx: usize, ky: usize) -> Complex64 {
        self.data[kx * self.half_width() + ky]
    }

    pub fn set(&mut self, kx: usize, ky: usize, value: Complex64) {
        let hw = self.half_width();
        self.data[kx * hw + ky] = value;
    }
}

pub fn rfft2(x: &ScalarGrid) -> SpectrumHalf {
    let (h, w) = x.shape();
    SpectrumHalf {
        height: h,
        width: w,
        data: rfft2_cols(x.data(), h, w, half_width(w)),
    }
}

pub fn irfft2(s: &SpectrumHalf) -> ScalarGrid {
    let data = irfft2_cols(&s.data, s.height, s.width, s.half_width());
    ScalarGrid::from_raw(s.height, s.width, data)
}

/// Which rows of the spectrum a kernel acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeSetKind {
    /// `k_x` in `[-m, m-1]`: the original asymmetric block, `2m` rows.
    Standard,
    /// `|k_x| <= m-1`: closed under `k_x -> -k_x`, `2m-1` rows.
    Symmetric,
}

/// Retained Fourier modes: a set of signed `k_x` rows times `k_y` in `[0, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeSet {
    modes: usize,
    kind: ModeSetKind,
}

impl ModeSet {
    pub fn new(modes: usize, kind: ModeSetKind) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Bounds("mode count must be positive".into()));
        }
        Ok(Self { modes, kind })
    }

    pub fn standard(modes: usize) -> Result<Self> {
        Self::new(modes, ModeSetKind::Standard)
    }

    pub fn symmetric(modes: usize) -> Result<Self> {
        Self::new(modes, ModeSetKind::Symmetric)
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn kind(&self) -> ModeSetKind {
        self.kind
    }

    /// Signed `k_x` of every retained row: nonnegative rows first, ascending,
    /// then the negative rows ascending (FFT storage order).
    pub fn row_frequencies(&self) -> Vec<i64> {
        let m = self.modes as i64;
        let lowest = match self.kind {
            ModeSetKind::Standard => -m,
            ModeSetKind::Symmetric => -(m - 1),
        };
        (0..m).chain(lowest..0).collect()
    }

    pub fn rows(&self) -> usize {
        match self.kind {
            ModeSetKind::Standard => 2 * self.modes,
            ModeSetKind::Symmetric => 2 * self.modes - 1,
        }
    }

    /// Number of retained `(k_x, k_y)` slots.
    pub fn len(&self) -> usize {
        self.rows() * self.modes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check_fits(&self, h: usize, w: usize) -> Result<()> {
        if 2 * self.modes > h.min(w) {
            return Err(Error::Bounds(format!(
                "{} modes do not fit a {h}x{w} grid (need m <= min(H, W) / 2)",
                self.modes
            )));
        }
        Ok(())
    }

    /// Signed `(k_x, k_y)` for every slot, in block order.
    pub fn frequencies(&self) -> Vec<(i64, i64)> {
        let m = self.modes as i64;
        self.row_frequencies()
            .into_iter()
            .flat_map(|kx| (0..m).map(move |ky| (kx, ky)))
            .collect()
    }

    /// Flat half-spectrum offsets for every slot on an `h x w` grid.
    pub(crate) fn offsets(&self, h: usize, w: usize) -> Vec<usize> {
        let hw = half_width(w);
        self.frequencies()
            .into_iter()
            .map(|(kx, ky)| kx.rem_euclid(h as i64) as usize * hw + ky as usize)
            .collect()
    }
}

/// Retained spectral coefficients of one channel, in [`ModeSet::frequencies`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBlock {
    set: ModeSet,
    values: Vec<Complex64>,
}

impl ModeBlock {
    pub fn new(set: ModeSet, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != set.len() {
            return Err(Error::shape(format!(
                "mode block needs {} values, got {}",
                set.len(),
                values.len()
            )));
        }
        Ok(Self { set, values })
    }

    pub fn set(&self) -> ModeSet {
        self.set
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

pub fn truncate_modes(s: &SpectrumHalf, set: ModeSet) -> Result<ModeBlock> {
    set.check_fits(s.height, s.width)?;
    let values = set
        .offsets(s.height, s.width)
        .into_iter()
        .map(|o| s.data[o])
        .collect();
    Ok(ModeBlock { set, values })
}

pub fn scatter_modes(b: &ModeBlock, h: usize, w: usize) -> Result<SpectrumHalf> {
    b.set.check_fits(h, w)?;
    let mut s = SpectrumHalf::zeros(h, w);
    for (o, v) in b.set.offsets(h, w).into_iter().zip(&b.values) {
        s.data[o] = *v;
    }
    Ok(s)
}

/// Sobolev weights `(1 + |k|^2)^2` over the full `h x w` spectrum, with `k`
/// the signed integer frequency.
pub fn spectral_h2_weights(h: usize, w: usize) -> ScalarGrid {
    ScalarGrid::from_fn(h, w, |k, l| {
        let kx = signed_frequency(k, h) as f64;
        let ky = signed_frequency(l, w) as f64;
        let s = 1.0 + kx * kx + ky * ky;
        s * s
    })
}
