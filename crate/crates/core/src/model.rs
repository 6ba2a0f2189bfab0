//! The neural operator: lift, a stack of Fourier layers, project.
//!
//! Each Fourier layer computes `relu(W v + b + F^{-1}(R . F(v)))` where the
//! spectral kernel `R` acts on a truncated block of modes. The standard
//! variant stores `R` as free complex weights over `k_x in [-m, m-1]`; the
//! isotropic variant stores only the real triangular generator and expands
//! it over `|k_x| <= m-1`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{affine_into, ChannelField};
use crate::spectral::{half_width, irfft2_cols, rfft2_cols, ModeSet};
use crate::symmetry::{expand_generator, generator_len, IsoGenerator, SpectralKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Standard,
    Isotropic,
}

impl Variant {
    pub fn tag(self) -> u32 {
        match self {
            Variant::Standard => 0,
            Variant::Isotropic => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Variant::Standard),
            1 => Some(Variant::Isotropic),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Standard => "standard",
            Variant::Isotropic => "iso",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "fno" => Ok(Variant::Standard),
            "iso" | "isotropic" => Ok(Variant::Isotropic),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Hidden channel count `d_v`.
    pub width: usize,
    pub modes: usize,
    pub layers: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub projection_hidden: usize,
    /// Zero cells added on every side of the lifted field before the
    /// Fourier layers and removed before projection. Symmetric padding keeps
    /// the square-group equivariance exact; any nonzero value gives up
    /// circular translation equivariance, which lets the model see where a
    /// non-periodic boundary lies.
    pub padding: usize,
}

impl ModelConfig {
    /// Scalar-to-scalar operator with the default 128-wide projection.
    pub fn new(variant: Variant, width: usize, modes: usize, layers: usize) -> Self {
        Self {
            variant,
            width,
            modes,
            layers,
            in_channels: 1,
            out_channels: 1,
            projection_hidden: 128,
            padding: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("width", self.width),
            ("modes", self.modes),
            ("layers", self.layers),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("projection_hidden", self.projection_hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn mode_set(&self) -> ModeSet {
        let set = match self.variant {
            Variant::Standard => ModeSet::standard(self.modes),
            Variant::Isotropic => ModeSet::symmetric(self.modes),
        };
        set.expect("modes validated positive")
    }

    /// Real scalars in one layer's spectral kernel.
    pub fn spectral_len(&self) -> usize {
        let pairs = self.width * self.width;
        match self.variant {
            Variant::Standard => pairs * 2 * self.mode_set().len(),
            Variant::Isotropic => pairs * generator_len(self.modes),
        }
    }

    /// Square, power-of-two grids large enough for the retained modes.
    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        if h != w || !h.is_power_of_two() {
            return Err(Error::config(format!(
                "operator needs a square power-of-two grid, got {h}x{w}"
            )));
        }
        self.mode_set()
            .check_fits(h, w)
            .map_err(|e| Error::config(e.to_string()))
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout::new(self)
    }
}

/// Offsets of every parameter group in the flat vector, in canonical order:
/// lift weight and bias, then per layer the spectral block, mixing weight and
/// bias, then both projection stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterLayout {
    pub lift_weight: Range<usize>,
    pub lift_bias: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub proj_hidden_weight: Range<usize>,
    pub proj_hidden_bias: Range<usize>,
    pub proj_out_weight: Range<usize>,
    pub proj_out_bias: Range<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub spectral: Range<usize>,
    pub mix_weight: Range<usize>,
    pub mix_bias: Range<usize>,
}

impl ParameterLayout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut cursor = 0;
        let mut take = |n: usize| {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };
        let d = cfg.width;
        let lift_weight = take(d * cfg.in_channels);
        let lift_bias = take(d);
        let layers = (0..cfg.layers)
            .map(|_| LayerLayout {
                spectral: take(cfg.spectral_len()),
                mix_weight: take(d * d),
                mix_bias: take(d),
            })
            .collect();
        let proj_hidden_weight = take(cfg.projection_hidden * d);
        let proj_hidden_bias = take(cfg.projection_hidden);
        let proj_out_weight = take(cfg.out_channels * cfg.projection_hidden);
        let proj_out_bias = take(cfg.out_channels);
        Self {
            lift_weight,
            lift_bias,
            layers,
            proj_hidden_weight,
            proj_hidden_bias,
            proj_out_weight,
            proj_out_bias,
            total: cursor,
        }
    }

    /// Ranges with the fan-in used for uniform initialization, in canonical order.
    fn affine_groups(&self, cfg: &ModelConfig) -> Vec<(Range<usize>, usize)> {
        let mut v = vec![
            (self.lift_weight.clone(), cfg.in_channels),
            (self.lift_bias.clone(), cfg.in_channels),
        ];
        for l in &self.layers {
            v.push((l.mix_weight.clone(), cfg.width));
            v.push((l.mix_bias.clone(), cfg.width));
        }
        v.push((self.proj_hidden_weight.clone(), cfg.width));
        v.push((self.proj_hidden_bias.clone(), cfg.width));
        v.push((self.proj_out_weight.clone(), cfg.projection_hidden));
        v.push((self.proj_out_bias.clone(), cfg.projection_hidden));
        v
    }
}

/// Exact number of free real scalars in the model.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    cfg.layout().total
}

/// Real scalars held by the spectral kernels alone.
pub fn count_spectral_parameters(cfg: &ModelConfig) -> usize {
    cfg.layers * cfg.spectral_len()
}

/// Global scalar statistics used to standardize inputs and restore outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub input_mean: f64,
    pub input_std: f64,
    pub output_mean: f64,
    pub output_std: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            input_mean: 0.0,
            input_std: 1.0,
            output_mean: 0.0,
            output_std: 1.0,
        }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.input_mean,
            self.input_std,
            self.output_mean,
            self.output_std,
        ];
        if all.iter().any(|v| !v.is_finite()) || self.input_std <= 0.0 || self.output_std <= 0.0 {
            return Err(Error::config(format!("invalid normalization {self:?}")));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 4] {
        [
            self.input_mean,
            self.input_std,
            self.output_mean,
            self.output_std,
        ]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            input_mean: a[0],
            input_std: a[1],
            output_mean: a[2],
            output_std: a[3],
        }
    }
}

/// All model parameters as one flat vector plus the fitted normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    config: ModelConfig,
    normalization: Normalization,
    values: Vec<f64>,
}

impl ModelParameters {
    pub fn from_values(
        config: ModelConfig,
        normalization: Normalization,
        values: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        normalization.validate()?;
        let expected = count_parameters(&config);
        if values.len() != expected {
            return Err(Error::config(format!(
                "configuration needs {expected} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        Ok(Self {
            config,
            normalization,
            values,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = count_parameters(&config);
        Ok(Self {
            config,
            normalization: Normalization::default(),
            values: vec![0.0; n],
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn set_normalization(&mut self, n: Normalization) -> Result<()> {
        n.validate()?;
        self.normalization = n;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> ParameterLayout {
        self.config.layout()
    }

    /// Spectral kernel of layer `l` as it acts on the retained modes.
    pub fn spectral_kernel(&self, l: usize) -> Result<SpectralKernel> {
        let cfg = &self.config;
        if l >= cfg.layers {
            return Err(Error::Bounds(format!("layer {l} of {}", cfg.layers)));
        }
        let raw = &self.values[self.layout().layers[l].spectral.clone()];
        match cfg.variant {
            Variant::Standard => {
                SpectralKernel::from_interleaved(cfg.width, cfg.width, cfg.mode_set(), raw)
            }
            Variant::Isotropic => expand_generator(&self.iso_generator(l)?, cfg.mode_set()),
        }
    }

    pub fn iso_generator(&self, l: usize) -> Result<IsoGenerator> {
        let cfg = &self.config;
        if cfg.variant != Variant::Isotropic {
            return Err(Error::config("standard models have no generator"));
        }
        let raw = &self.values[self.layout().layers[l].spectral.clone()];
        IsoGenerator::new(cfg.width, cfg.width, cfg.modes, raw.to_vec())
    }
}

/// Deterministic initialization. Spectral weights are `U[0, 1) / d_v^2`;
/// affine maps draw weights and biases from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_parameters(cfg: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    let mut params = ModelParameters::zeros(*cfg)?;
    let layout = cfg.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (cfg.width * cfg.width) as f64;
    let mut affine = layout.affine_groups(cfg).into_iter();
    let v = &mut params.values;

    let fill_affine = |range: Range<usize>, fan_in: usize, v: &mut [f64], rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for x in &mut v[range] {
            *x = rng.random_range(-bound..bound);
        }
    };
    // Draw in canonical layout order so the stream maps one-to-one onto the vector.
    for _ in 0..2 {
        let (r, f) = affine.next().expect("lift groups");
        fill_affine(r, f, v, &mut rng);
    }
    for l in &layout.layers {
        for x in &mut v[l.spectral.clone()] {
            *x = scale * rng.random::<f64>();
        }
        for _ in 0..2 {
            let (r, f) = affine.next().expect("layer groups");
            fill_affine(r, f, v, &mut rng);
        }
    }
    for (r, f) in affine {
        fill_affine(r, f, v, &mut rng);
    }
    Ok(params)
}

/// Draws every parameter from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, with
/// fan-in `d_v` for spectral entries (real and imaginary parts alike). Unlike
/// [`init_parameters`] the spectral branch has unit gain, which makes this the
/// draw used for symmetry checks on untrained models.
pub fn random_parameters(cfg: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    let mut params = ModelParameters::zeros(*cfg)?;
    let layout = cfg.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = layout.affine_groups(cfg);
    groups.extend(
        layout
            .layers
            .iter()
            .map(|l| (l.spectral.clone(), cfg.width)),
    );
    groups.sort_by_key(|(r, _)| r.start);
    for (range, fan_in) in groups {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for x in &mut params.values[range] {
            *x = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Intermediates of one Fourier layer needed by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerRecord {
    pub input: Vec<f64>,
    /// Retained input spectra, `[channel][slot]`.
    pub spectra: Vec<Complex64>,
    pub pre_activation: Vec<f64>,
}

/// Everything a forward pass produces when recording is on.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ForwardRecord {
    pub height: usize,
    pub width: usize,
    pub normalized_input: Vec<f64>,
    pub layers: Vec<LayerRecord>,
    pub final_hidden: Vec<f64>,
    pub projection_pre_activation: Vec<f64>,
}

/// Embeds each `h x w` channel in the middle of a zero field `pad` cells
/// larger on every side.
pub(crate) fn pad_channels(x: &[f64], c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for i in 0..h {
            let src = &x[(ch * h + i) * w..(ch * h + i + 1) * w];
            let start = (ch * hp + i + pad) * wp + pad;
            out[start..start + w].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`pad_channels`]: keeps the central `h x w` block of each
/// `hp x wp` channel.
pub(crate) fn crop_channels(x: &[f64], c: usize, hp: usize, wp: usize, pad: usize) -> Vec<f64> {
    let (h, w) = (hp - 2 * pad, wp - 2 * pad);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..h {
            let start = (ch * hp + i + pad) * wp + pad;
            out.extend_from_slice(&x[start..start + w]);
        }
    }
    out
}

/// Spectral branch plus pointwise branch, before the activation.
/// Returns `(retained input spectra, pre-activation)`.
fn layer_pre_activation(
    kernel: &SpectralKernel,
    weight: &[f64],
    bias: &[f64],
    input: &[f64],
    h: usize,
    w: usize,
) -> (Vec<Complex64>, Vec<f64>) {
    let c = kernel.c_in();
    let c_out = kernel.c_out();
    let set = kernel.mode_set();
    let ncols = set.modes();
    let offsets = set.offsets(h, w);
    let n = offsets.len();
    let pixels = h * w;

    let mut spectra = vec![Complex64::new(0.0, 0.0); c * n];
    for i in 0..c {
        let s = rfft2_cols(&input[i * pixels..(i + 1) * pixels], h, w, ncols);
        for (dst, &o) in spectra[i * n..(i + 1) * n].iter_mut().zip(&offsets) {
            *dst = s[o];
        }
    }

    let mut z = vec![0.0; c_out * pixels];
    affine_into(input, c, pixels, weight, bias, &mut z);

    let kw = kernel.weights();
    let mut y = vec![Complex64::new(0.0, 0.0); h * half_width(w)];
    for o in 0..c_out {
        for (s, &off) in offsets.iter().enumerate() {
            let row = &kw[(s * c_out + o) * c..(s * c_out + o + 1) * c];
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, r) in row.iter().enumerate() {
                acc += r * spectra[i * n + s];
            }
            y[off] = acc;
        }
        let spatial = irfft2_cols(&y, h, w, ncols);
        for (dst, v) in z[o * pixels..(o + 1) * pixels].iter_mut().zip(spatial) {
            *dst += v;
        }
    }
    (spectra, z)
}

/// One Fourier layer: `relu(W v + b + irfft2(R . rfft2(v)))`.
pub fn fourier_layer(
    v: &ChannelField,
    kernel: &SpectralKernel,
    weight: &[f64],
    bias: &[f64],
) -> Result<ChannelField> {
    let (h, w) = (v.height(), v.width());
    if v.channels() != kernel.c_in()
        || weight.len() != kernel.c_out() * kernel.c_in()
        || bias.len() != kernel.c_out()
    {
        return Err(Error::shape(format!(
            "layer expects {} input channels with a {}x{} mixing matrix",
            kernel.c_in(),
            kernel.c_out(),
            kernel.c_in()
        )));
    }
    if h != w || !h.is_power_of_two() {
        return Err(Error::shape(format!(
            "layer needs a square power-of-two grid, got {h}x{w}"
        )));
    }
    kernel.mode_set().check_fits(h, w)?;
    let (_, mut z) = layer_pre_activation(kernel, weight, bias, v.data(), h, w);
    z.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(ChannelField::from_raw(kernel.c_out(), h, w, z))
}

/// A parameter set with its spectral kernels expanded once, ready to
/// evaluate many inputs.
#[derive(Debug, Clone)]
pub struct Operator<'a> {
    params: &'a ModelParameters,
    kernels: Vec<SpectralKernel>,
    layout: ParameterLayout,
}

impl<'a> Operator<'a> {
    pub fn new(params: &'a ModelParameters) -> Result<Self> {
        let cfg = params.config();
        let kernels = (0..cfg.layers)
            .map(|l| params.spectral_kernel(l))
            .collect::<Result<_>>()?;
        Ok(Self {
            params,
            kernels,
            layout: params.layout(),
        })
    }

    pub fn params(&self) -> &'a ModelParameters {
        self.params
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn kernels(&self) -> &[SpectralKernel] {
        &self.kernels
    }

    pub(crate) fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn forward(&self, a: &ChannelField) -> Result<ChannelField> {
        self.run(a, false).map(|(out, _)| out)
    }

    pub(crate) fn run(
        &self,
        a: &ChannelField,
        record: bool,
    ) -> Result<(ChannelField, Option<ForwardRecord>)> {
        let cfg = self.params.config();
        let (h, w) = (a.height(), a.width());
        let pad = cfg.padding;
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        if a.channels() != cfg.in_channels {
            return Err(Error::shape(format!(
                "model takes {} input channels, got {}",
                cfg.in_channels,
                a.channels()
            )));
        }
        cfg.check_resolution(h, w)?;
        let pixels = h * w;
        let d = cfg.width;
        let norm = self.params.normalization();
        let v = self.params.values();
        let lay = &self.layout;

        let normalized: Vec<f64> = a
            .data()
            .iter()
            .map(|x| (x - norm.input_mean) / norm.input_std)
            .collect();
        let mut hidden = vec![0.0; d * pixels];
        affine_into(
            &normalized,
            cfg.in_channels,
            pixels,
            &v[lay.lift_weight.clone()],
            &v[lay.lift_bias.clone()],
            &mut hidden,
        );
        if pad > 0 {
            hidden = pad_channels(&hidden, d, h, w, pad);
        }

        let mut records = Vec::new();
        for (kernel, ll) in self.kernels.iter().zip(&lay.layers) {
            let (spectra, z) = layer_pre_activation(
                kernel,
                &v[ll.mix_weight.clone()],
                &v[ll.mix_bias.clone()],
                &hidden,
                hp,
                wp,
            );
            let next: Vec<f64> = z.iter().map(|x| x.max(0.0)).collect();
            if record {
                records.push(LayerRecord {
                    input: std::mem::replace(&mut hidden, next),
                    spectra,
                    pre_activation: z,
                });
            } else {
                hidden = next;
            }
        }

        if pad > 0 {
            hidden = crop_channels(&hidden, d, hp, wp, pad);
        }
        let mut q_pre = vec![0.0; cfg.projection_hidden * pixels];
        affine_into(
            &hidden,
            d,
            pixels,
            &v[lay.proj_hidden_weight.clone()],
            &v[lay.proj_hidden_bias.clone()],
            &mut q_pre,
        );
        let q: Vec<f64> = q_pre.iter().map(|x| x.max(0.0)).collect();
        let mut out = vec![0.0; cfg.out_channels * pixels];
        affine_into(
            &q,
            cfg.projection_hidden,
            pixels,
            &v[lay.proj_out_weight.clone()],
            &v[lay.proj_out_bias.clone()],
            &mut out,
        );
        out.iter_mut()
            .for_each(|x| *x = *x * norm.output_std + norm.output_mean);

        let record = record.then(|| ForwardRecord {
            height: h,
            width: w,
            normalized_input: normalized,
            layers: records,
            final_hidden: hidden,
            projection_pre_activation: q_pre,
        });
        Ok((ChannelField::from_raw(cfg.out_channels, h, w, out), record))
    }
}

/// Evaluates the operator on one input.
pub fn forward(params: &ModelParameters, a: &ChannelField) -> Result<ChannelField> {
    Operator::new(params)?.forward(a)
}
