//! Dense 2D grids, channel stacks and the D4 spatial actions.
//!
//! All grids are row-major. Row index `i` runs along the "x" axis of the
//! square domain and column index `j` along "y", so `FlipX` reverses rows and
//! `FlipY` reverses columns.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A real-valued field sampled on an `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut grid = Self::zeros(height, width);
        for i in 0..height {
            for j in 0..width {
                grid.data[i * width + j] = f(i, j);
            }
        }
        grid
    }

    /// Builds a grid from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(height, width, rows.concat())
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.width + j] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn to_complex(&self) -> ComplexGrid {
        ComplexGrid::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &ScalarGrid) -> f64 {
        assert_eq!(
            self.shape(),
            other.shape(),
            "shape mismatch in max_abs_diff"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A complex-valued field on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        self.data[i * self.width + j] = value;
    }

    pub fn real(&self) -> ScalarGrid {
        ScalarGrid::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|c| c.re).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &ComplexGrid) -> f64 {
        assert_eq!(
            self.shape(),
            other.shape(),
            "shape mismatch in max_abs_diff"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// A `channels x height x width` stack of real grids, stored contiguously
/// channel by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelField {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ChannelField {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "field dimensions must be positive"
        );
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_grids(grids: &[ScalarGrid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::shape("channel field needs at least one channel"))?;
        let (height, width) = first.shape();
        if grids.iter().any(|g| g.shape() != (height, width)) {
            return Err(Error::shape("channels have differing shapes"));
        }
        let mut data = Vec::with_capacity(grids.len() * height * width);
        for g in grids {
            data.extend_from_slice(g.data());
        }
        Ok(Self {
            channels: grids.len(),
            height,
            width,
            data,
        })
    }

    pub fn from_grid(grid: &ScalarGrid) -> Self {
        Self {
            channels: 1,
            height: grid.height,
            width: grid.width,
            data: grid.data.clone(),
        }
    }

    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn grid(&self, c: usize) -> ScalarGrid {
        ScalarGrid::from_raw(self.height, self.width, self.channel(c).to_vec())
    }

    pub fn grids(&self) -> Vec<ScalarGrid> {
        (0..self.channels).map(|c| self.grid(c)).collect()
    }

    pub fn max_abs_diff(&self, other: &ChannelField) -> f64 {
        assert_eq!(
            (self.channels, self.height, self.width),
            (other.channels, other.height, other.width),
            "shape mismatch in max_abs_diff"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The eight symmetries of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupElement {
    Identity,
    FlipX,
    FlipY,
    Transpose,
    Rot90,
    Rot180,
    Rot270,
    AntiTranspose,
}

impl GroupElement {
    pub const ALL: [GroupElement; 8] = [
        GroupElement::Identity,
        GroupElement::FlipX,
        GroupElement::FlipY,
        GroupElement::Transpose,
        GroupElement::Rot90,
        GroupElement::Rot180,
        GroupElement::Rot270,
        GroupElement::AntiTranspose,
    ];

    /// Signed permutation matrix acting on centered (row, column) coordinates.
    /// `Rot90` is `FlipX` applied after `Transpose`.
    pub fn matrix(self) -> [[i8; 2]; 2] {
        match self {
            GroupElement::Identity => [[1, 0], [0, 1]],
            GroupElement::FlipX => [[-1, 0], [0, 1]],
            GroupElement::FlipY => [[1, 0], [0, -1]],
            GroupElement::Transpose => [[0, 1], [1, 0]],
            GroupElement::Rot90 => [[0, -1], [1, 0]],
            GroupElement::Rot180 => [[-1, 0], [0, -1]],
            GroupElement::Rot270 => [[0, 1], [-1, 0]],
            GroupElement::AntiTranspose => [[0, -1], [-1, 0]],
        }
    }

    fn from_matrix(m: [[i8; 2]; 2]) -> Self {
        *Self::ALL
            .iter()
            .find(|g| g.matrix() == m)
            .expect("D4 is closed under composition")
    }

    /// `self.compose(other)` applies `other` first, then `self`.
    pub fn compose(self, other: GroupElement) -> GroupElement {
        let a = self.matrix();
        let b = other.matrix();
        let mut c = [[0i8; 2]; 2];
        for (r, row) in c.iter_mut().enumerate() {
            for (k, entry) in row.iter_mut().enumerate() {
                *entry = a[r][0] * b[0][k] + a[r][1] * b[1][k];
            }
        }
        Self::from_matrix(c)
    }

    pub fn inverse(self) -> GroupElement {
        let m = self.matrix();
        // Orthogonal: inverse is the transpose.
        Self::from_matrix([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    /// True for the elements that exchange the two axes.
    pub fn swaps_axes(self) -> bool {
        self.matrix()[0][0] == 0
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupElement::Identity => "identity",
            GroupElement::FlipX => "flip-x",
            GroupElement::FlipY => "flip-y",
            GroupElement::Transpose => "transpose",
            GroupElement::Rot90 => "rot90",
            GroupElement::Rot180 => "rot180",
            GroupElement::Rot270 => "rot270",
            GroupElement::AntiTranspose => "anti-transpose",
        }
    }

    /// Destination index of source pixel `(i, j)` on an `h x w` grid.
    fn destination(self, i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
        let m = self.matrix();
        // Doubled centered coordinates keep everything integral.
        let x = 2 * i as i64 - (h as i64 - 1);
        let y = 2 * j as i64 - (w as i64 - 1);
        let xd = m[0][0] as i64 * x + m[0][1] as i64 * y;
        let yd = m[1][0] as i64 * x + m[1][1] as i64 * y;
        let (hd, wd) = if self.swaps_axes() { (w, h) } else { (h, w) };
        (
            ((xd + hd as i64 - 1) / 2) as usize,
            ((yd + wd as i64 - 1) / 2) as usize,
        )
    }

    fn permute<T: Copy>(self, src: &[T], dst: &mut [T], h: usize, w: usize) {
        let wd = if self.swaps_axes() { h } else { w };
        for i in 0..h {
            for j in 0..w {
                let (id, jd) = self.destination(i, j, h, w);
                dst[id * wd + jd] = src[i * w + j];
            }
        }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupElement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "identity" => Ok(GroupElement::Identity),
            other => Self::ALL
                .iter()
                .copied()
                .find(|g| g.name() == other)
                .ok_or_else(|| Error::Domain(format!("unknown group element '{other}'"))),
        }
    }
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::shape(format!(
            "grid dimensions must be positive, got {height}x{width}"
        )));
    }
    if len != height * width {
        return Err(Error::shape(format!(
            "data length {len} does not match {height}x{width}"
        )));
    }
    Ok(())
}

fn check_group_shape(g: GroupElement, h: usize, w: usize) -> Result<()> {
    if g.swaps_axes() && h != w {
        return Err(Error::shape(format!(
            "{g} requires a square grid, got {h}x{w}"
        )));
    }
    Ok(())
}

pub fn apply_group(g: GroupElement, x: &ScalarGrid) -> Result<ScalarGrid> {
    check_group_shape(g, x.height, x.width)?;
    let mut out = vec![0.0; x.data.len()];
    g.permute(&x.data, &mut out, x.height, x.width);
    let (h, w) = if g.swaps_axes() {
        (x.width, x.height)
    } else {
        (x.height, x.width)
    };
    Ok(ScalarGrid::from_raw(h, w, out))
}

/// Applies `g` to every channel.
pub fn apply_group_field(g: GroupElement, x: &ChannelField) -> Result<ChannelField> {
    check_group_shape(g, x.height, x.width)?;
    let n = x.pixels();
    let mut out = vec![0.0; x.data.len()];
    for c in 0..x.channels {
        g.permute(
            &x.data[c * n..(c + 1) * n],
            &mut out[c * n..(c + 1) * n],
            x.height,
            x.width,
        );
    }
    let (h, w) = if g.swaps_axes() {
        (x.width, x.height)
    } else {
        (x.height, x.width)
    };
    Ok(ChannelField::from_raw(x.channels, h, w, out))
}

/// Circular translation: output `(i, j)` takes input `((i - di) mod H, (j - dj) mod W)`.
pub fn circular_shift(x: &ScalarGrid, di: usize, dj: usize) -> ScalarGrid {
    let (h, w) = x.shape();
    ScalarGrid::from_fn(h, w, |i, j| {
        x.get((i + h - di % h) % h, (j + w - dj % w) % w)
    })
}

pub fn circular_shift_field(x: &ChannelField, di: usize, dj: usize) -> ChannelField {
    let grids: Vec<_> = x
        .grids()
        .iter()
        .map(|g| circular_shift(g, di, dj))
        .collect();
    ChannelField::from_grids(&grids).expect("shift preserves shape")
}

/// `out[o] = sum_i weight[o, i] * x[i] + bias[o]` at every pixel, with `weight`
/// stored row-major as `c_out x c_in` and `c_out = bias.len()`.
pub fn pointwise_affine(x: &ChannelField, weight: &[f64], bias: &[f64]) -> Result<ChannelField> {
    let c_out = bias.len();
    if c_out == 0 || weight.len() != c_out * x.channels {
        return Err(Error::shape(format!(
            "affine weight has {} entries, expected {}x{}",
            weight.len(),
            c_out,
            x.channels
        )));
    }
    let mut out = ChannelField::zeros(c_out, x.height, x.width);
    affine_into(
        x.data(),
        x.channels,
        x.pixels(),
        weight,
        bias,
        out.data_mut(),
    );
    Ok(out)
}

/// Raw-slice kernel behind [`pointwise_affine`]; overwrites `out`.
pub(crate) fn affine_into(
    x: &[f64],
    c_in: usize,
    pixels: usize,
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    for (o, out_ch) in out.chunks_exact_mut(pixels).enumerate() {
        out_ch.fill(bias[o]);
        for i in 0..c_in {
            let w = weight[o * c_in + i];
            if w == 0.0 {
                continue;
            }
            let x_ch = &x[i * pixels..(i + 1) * pixels];
            for (dst, &src) in out_ch.iter_mut().zip(x_ch) {
                *dst += w * src;
            }
        }
    }
}

pub fn relu(x: &ChannelField) -> ChannelField {
    let data = x.data.iter().map(|&v| v.max(0.0)).collect();
    ChannelField::from_raw(x.channels, x.height, x.width, data)
}
