//! Reverse-mode gradients of the operator and a finite-difference checker.
//!
//! The tape is specific to the lift / Fourier layers / projection stack. Two
//! adjoints carry the weight of the spectral path:
//!
//! * `irfft2`: `y = (1/HW) sum_k c(k_y) Re(Y_k e^{i theta})` with `c = 1` on the
//!   zero (and Nyquist) column, `2` elsewhere, so `dY_k = (c(k_y)/HW) rfft2(dy)_k`.
//! * `rfft2`: every stored half-spectrum entry is an independent output, so
//!   `dv = Re(sum_k dV_k e^{i theta}) = HW irfft2(dV / c)`.
//!
//! Complex cotangents use the convention `dz = dL/dRe z + i dL/dIm z`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::ChannelField;
use crate::model::{
    crop_channels, pad_channels, ForwardRecord, ModelConfig, ModelParameters, Operator, Variant,
};
use crate::spectral::{half_width, hermitian_weight, irfft2_cols, rfft2_cols};
use crate::symmetry::{fold_into_generator, generator_index, generator_len, SpectralKernel};

/// Primal intermediates of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    config: ModelConfig,
    fingerprint: u64,
    record: ForwardRecord,
}

impl Tape {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Sign pattern of every ReLU input (layers, then projection).
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.record
            .layers
            .iter()
            .flat_map(|l| l.pre_activation.iter())
            .chain(&self.record.projection_pre_activation)
            .map(|&z| z > 0.0)
            .collect()
    }

    /// Number of `f64` values held per layer (inputs, pre-activations, and
    /// real/imaginary parts of the retained spectra).
    pub fn layer_footprint(&self) -> Vec<usize> {
        self.record
            .layers
            .iter()
            .map(|l| l.input.len() + l.pre_activation.len() + 2 * l.spectra.len())
            .collect()
    }
}

/// Cotangents of every parameter, in the same flat layout as [`ModelParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    config: ModelConfig,
    values: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            config,
            values: vec![0.0; config.layout().total],
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.config != other.config {
            return Err(Error::shape("gradient sets from different configurations"));
        }
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn dot(&self, direction: &[f64]) -> f64 {
        self.values.iter().zip(direction).map(|(a, b)| a * b).sum()
    }
}

/// How the backward pass treats isotropic kernel cotangents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjointVariant {
    #[default]
    Exact,
    /// Credits each generator entry with only its canonical slot
    /// `(k_x, k_y) = (p, q)`, dropping the rest of the orbit. Wrong on
    /// purpose; exists to show the gradient checker catches it.
    WithoutOrbitFolding,
}

/// FNV-1a over parameter bits and normalization.
fn fingerprint(params: &ModelParameters) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let norm = params.normalization().to_array();
    for v in params.values().iter().chain(norm.iter()) {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Overwrites `dweight`/`dbias` contributions (accumulating) and adds the
/// input cotangent into `dx` when given.
#[allow(clippy::too_many_arguments)]
fn affine_backward(
    x: &[f64],
    c_in: usize,
    pixels: usize,
    weight: &[f64],
    dz: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for (o, dz_o) in dz.chunks_exact(pixels).enumerate() {
        dbias[o] += dz_o.iter().sum::<f64>();
        for i in 0..c_in {
            let x_i = &x[i * pixels..(i + 1) * pixels];
            dweight[o * c_in + i] += dz_o.iter().zip(x_i).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    if let Some(dx) = dx {
        for (o, dz_o) in dz.chunks_exact(pixels).enumerate() {
            for i in 0..c_in {
                let w = weight[o * c_in + i];
                if w == 0.0 {
                    continue;
                }
                for (d, &g) in dx[i * pixels..(i + 1) * pixels].iter_mut().zip(dz_o) {
                    *d += w * g;
                }
            }
        }
    }
}

fn relu_backward(pre: &[f64], upstream: &mut [f64]) {
    for (g, &z) in upstream.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

impl Operator<'_> {
    pub fn forward_with_tape(&self, a: &ChannelField) -> Result<(ChannelField, Tape)> {
        let (out, record) = self.run(a, true)?;
        let tape = Tape {
            config: *self.config(),
            fingerprint: fingerprint(self.params()),
            record: record.expect("recording requested"),
        };
        Ok((out, tape))
    }

    pub fn backward(&self, tape: &Tape, cotangent: &ChannelField) -> Result<GradientSet> {
        self.backward_with(tape, cotangent, AdjointVariant::Exact)
    }

    pub fn backward_with(
        &self,
        tape: &Tape,
        cotangent: &ChannelField,
        adjoint: AdjointVariant,
    ) -> Result<GradientSet> {
        let params = self.params();
        let cfg = *params.config();
        if tape.config != cfg || tape.fingerprint != fingerprint(params) {
            return Err(Error::State(
                "tape was recorded with different parameters".into(),
            ));
        }
        let rec = &tape.record;
        let (h, w) = (rec.height, rec.width);
        let pixels = h * w;
        if cotangent.channels() != cfg.out_channels
            || cotangent.height() != h
            || cotangent.width() != w
        {
            return Err(Error::shape(
                "cotangent does not match the recorded prediction",
            ));
        }
        let lay = self.layout();
        let v = params.values();
        let d = cfg.width;
        let mut grad = GradientSet::zeros(cfg);
        let g = &mut grad.values;

        let out_std = params.normalization().output_std;
        let d_out: Vec<f64> = cotangent.data().iter().map(|x| x * out_std).collect();

        // Projection, second stage.
        let q: Vec<f64> = rec
            .projection_pre_activation
            .iter()
            .map(|x| x.max(0.0))
            .collect();
        let mut d_q = vec![0.0; cfg.projection_hidden * pixels];
        {
            let (dw, db) = split_pair(g, &lay.proj_out_weight, &lay.proj_out_bias);
            affine_backward(
                &q,
                cfg.projection_hidden,
                pixels,
                &v[lay.proj_out_weight.clone()],
                &d_out,
                dw,
                db,
                Some(&mut d_q),
            );
        }
        relu_backward(&rec.projection_pre_activation, &mut d_q);

        // Projection, first stage.
        let mut d_hidden = vec![0.0; d * pixels];
        {
            let (dw, db) = split_pair(g, &lay.proj_hidden_weight, &lay.proj_hidden_bias);
            affine_backward(
                &rec.final_hidden,
                d,
                pixels,
                &v[lay.proj_hidden_weight.clone()],
                &d_q,
                dw,
                db,
                Some(&mut d_hidden),
            );
        }

        let pad = cfg.padding;
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        if pad > 0 {
            d_hidden = pad_channels(&d_hidden, d, h, w, pad);
        }
        for (l, layer) in rec.layers.iter().enumerate().rev() {
            let ll = &lay.layers[l];
            let kernel = &self.kernels()[l];
            let mut d_z = d_hidden;
            relu_backward(&layer.pre_activation, &mut d_z);

            let mut d_input = vec![0.0; d * hp * wp];
            {
                let (dw, db) = split_pair(g, &ll.mix_weight, &ll.mix_bias);
                affine_backward(
                    &layer.input,
                    d,
                    hp * wp,
                    &v[ll.mix_weight.clone()],
                    &d_z,
                    dw,
                    db,
                    Some(&mut d_input),
                );
            }

            let d_kernel = spectral_backward(kernel, &layer.spectra, &d_z, &mut d_input, hp, wp);
            let dst = &mut g[ll.spectral.clone()];
            match cfg.variant {
                Variant::Standard => {
                    for (a, b) in dst.iter_mut().zip(d_kernel.to_interleaved()) {
                        *a += b;
                    }
                }
                Variant::Isotropic => {
                    let folded = match adjoint {
                        AdjointVariant::Exact => fold_into_generator(&d_kernel, cfg.modes)?,
                        AdjointVariant::WithoutOrbitFolding => {
                            canonical_slots_only(&d_kernel, cfg.modes)?
                        }
                    };
                    for (a, b) in dst.iter_mut().zip(folded) {
                        *a += b;
                    }
                }
            }
            d_hidden = d_input;
        }

        if pad > 0 {
            d_hidden = crop_channels(&d_hidden, d, hp, wp, pad);
        }
        let (dw, db) = split_pair(g, &lay.lift_weight, &lay.lift_bias);
        affine_backward(
            &rec.normalized_input,
            cfg.in_channels,
            pixels,
            &v[lay.lift_weight.clone()],
            &d_hidden,
            dw,
            db,
            None,
        );
        Ok(grad)
    }
}

/// Disjoint mutable views of a weight range and the bias range right after it.
fn split_pair<'g>(
    g: &'g mut [f64],
    weight: &std::ops::Range<usize>,
    bias: &std::ops::Range<usize>,
) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert_eq!(weight.end, bias.start);
    let (head, tail) = g[weight.start..bias.end].split_at_mut(weight.len());
    (head, tail)
}

/// Kernel cotangent of one layer; adds the input cotangent of the spectral
/// branch into `d_input`.
fn spectral_backward(
    kernel: &SpectralKernel,
    spectra: &[Complex64],
    d_z: &[f64],
    d_input: &mut [f64],
    h: usize,
    w: usize,
) -> SpectralKernel {
    let (c_out, c_in) = (kernel.c_out(), kernel.c_in());
    let set = kernel.mode_set();
    let ncols = set.modes();
    let offsets = set.offsets(h, w);
    let n = offsets.len();
    let pixels = h * w;
    let hw = half_width(w);
    let inv_area = 1.0 / pixels as f64;
    let col_weight: Vec<f64> = offsets
        .iter()
        .map(|&o| hermitian_weight(o % hw, w))
        .collect();

    // dY for every output channel at the retained modes.
    let mut d_y = vec![Complex64::new(0.0, 0.0); c_out * n];
    for o in 0..c_out {
        let s = rfft2_cols(&d_z[o * pixels..(o + 1) * pixels], h, w, ncols);
        for (k, &off) in offsets.iter().enumerate() {
            d_y[o * n + k] = s[off] * (col_weight[k] * inv_area);
        }
    }

    let mut d_kernel = SpectralKernel::zeros(c_out, c_in, set);
    let kw = kernel.weights();
    let dk = d_kernel.weights_mut();
    let mut d_v = vec![Complex64::new(0.0, 0.0); c_in * n];
    for k in 0..n {
        for o in 0..c_out {
            let dy = d_y[o * n + k];
            let base = (k * c_out + o) * c_in;
            for i in 0..c_in {
                dk[base + i] = dy * spectra[i * n + k].conj();
                d_v[i * n + k] += kw[base + i].conj() * dy;
            }
        }
    }

    let area = pixels as f64;
    let mut half = vec![Complex64::new(0.0, 0.0); h * hw];
    for i in 0..c_in {
        for (k, &off) in offsets.iter().enumerate() {
            half[off] = d_v[i * n + k] * (area / col_weight[k]);
        }
        let back = irfft2_cols(&half, h, w, ncols);
        for (dst, b) in d_input[i * pixels..(i + 1) * pixels].iter_mut().zip(back) {
            *dst += b;
        }
    }
    d_kernel
}

fn canonical_slots_only(d_kernel: &SpectralKernel, modes: usize) -> Result<Vec<f64>> {
    let (c_out, c_in) = (d_kernel.c_out(), d_kernel.c_in());
    let t_len = generator_len(modes);
    let mut out = vec![0.0; c_out * c_in * t_len];
    for (s, (kx, ky)) in d_kernel.mode_set().frequencies().into_iter().enumerate() {
        if kx < 0 || kx > ky {
            continue;
        }
        let t = generator_index(kx, ky, modes)?;
        for o in 0..c_out {
            for i in 0..c_in {
                out[(o * c_in + i) * t_len + t] +=
                    d_kernel.weights()[(s * c_out + o) * c_in + i].re;
            }
        }
    }
    Ok(out)
}

/// Prediction and tape in one call.
pub fn forward_with_tape(
    params: &ModelParameters,
    a: &ChannelField,
) -> Result<(ChannelField, Tape)> {
    Operator::new(params)?.forward_with_tape(a)
}

pub fn backward(
    params: &ModelParameters,
    tape: &Tape,
    cotangent: &ChannelField,
) -> Result<GradientSet> {
    Operator::new(params)?.backward(tape, cotangent)
}

/// Relative L2 loss `||pred - truth|| / ||truth||` over all channels and its
/// cotangent with respect to `pred` (zero where the error vanishes).
pub fn relative_l2_loss(pred: &ChannelField, truth: &ChannelField) -> Result<(f64, ChannelField)> {
    if (pred.channels(), pred.height(), pred.width())
        != (truth.channels(), truth.height(), truth.width())
    {
        return Err(Error::shape("prediction and truth differ in shape"));
    }
    let t_norm = truth.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if t_norm == 0.0 {
        return Err(Error::UndefinedMetric("truth has zero norm".into()));
    }
    let diff: Vec<f64> = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| p - t)
        .collect();
    let e_norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = if e_norm > 0.0 {
        1.0 / (e_norm * t_norm)
    } else {
        0.0
    };
    let cot = diff.iter().map(|x| x * scale).collect();
    Ok((
        e_norm / t_norm,
        ChannelField::from_raw(pred.channels(), pred.height(), pred.width(), cot),
    ))
}

/// Relative L2 training loss of a single sample and its parameter gradient.
pub fn loss_and_gradient(
    op: &Operator<'_>,
    a: &ChannelField,
    target: &ChannelField,
) -> Result<(f64, GradientSet)> {
    let (pred, tape) = op.forward_with_tape(a)?;
    let (loss, cot) = relative_l2_loss(&pred, target)?;
    Ok((loss, op.backward(&tape, &cot)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over all parameters.
    pub max_relative_error: f64,
    pub worst_parameter: usize,
    pub parameters_checked: usize,
    /// Parameters whose `+eps` or `-eps` probe flips at least one ReLU;
    /// central differences are not a valid oracle across such a kink.
    pub kink_crossings: usize,
}

pub fn grad_check(
    params: &ModelParameters,
    a: &ChannelField,
    target: &ChannelField,
    eps: f64,
) -> Result<GradCheckReport> {
    grad_check_with(params, a, target, eps, AdjointVariant::Exact)
}

/// Central differences of the relative L2 loss against the backward pass,
/// for every parameter.
pub fn grad_check_with(
    params: &ModelParameters,
    a: &ChannelField,
    target: &ChannelField,
    eps: f64,
    adjoint: AdjointVariant,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Domain(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    let op = Operator::new(params)?;
    let (pred, tape) = op.forward_with_tape(a)?;
    let (_, cot) = relative_l2_loss(&pred, target)?;
    let analytic = op.backward_with(&tape, &cot, adjoint)?;

    let pattern = tape.activation_pattern();
    let loss_at = |p: &ModelParameters| -> Result<(f64, bool)> {
        let (out, t) = Operator::new(p)?.forward_with_tape(a)?;
        Ok((
            relative_l2_loss(&out, target)?.0,
            t.activation_pattern() != pattern,
        ))
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: 0,
        parameters_checked: params.values().len(),
        kink_crossings: 0,
    };
    for k in 0..params.values().len() {
        let orig = params.values()[k];
        probe.values_mut()[k] = orig + eps;
        let (up, flip_up) = loss_at(&probe)?;
        probe.values_mut()[k] = orig - eps;
        let (down, flip_down) = loss_at(&probe)?;
        probe.values_mut()[k] = orig;
        if flip_up || flip_down {
            report.kink_crossings += 1;
        }
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic.values[k] - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_parameter = k;
        }
    }
    Ok(report)
}
