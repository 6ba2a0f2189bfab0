//! Binary dataset and checkpoint files, and CSV exports.
//!
//! All integers and floats are little-endian. Dataset files hold
//!
//! ```text
//! "IFNO" | version u32 | count u32 | height u32 | width u32
//! then per sample: a (height*width f64, row-major), u (same)
//! ```
//!
//! and checkpoint files hold
//!
//! ```text
//! "IFNC" | version u32 | variant u32 | width, modes, layers,
//! in_channels, out_channels, projection_hidden, padding (u32 each)
//! | input mean, input std, output mean, output std (f64)
//! | parameter count u64 | parameters (f64, canonical layout order)
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::darcy::DarcySample;
use crate::error::{Error, Result};
use crate::grid::ScalarGrid;
use crate::metrics::MetricReport;
use crate::model::{count_parameters, ModelConfig, ModelParameters, Normalization, Variant};
use crate::train::EpochMetrics;

pub const DATASET_MAGIC: &[u8; 4] = b"IFNO";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IFNC";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes before the first sample of a dataset file.
pub const DATASET_HEADER_LEN: usize = 20;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.offset(),
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn version(&mut self) -> Result<()> {
        let at = self.offset();
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(
                at,
                format!("unsupported version {v}, expected {FORMAT_VERSION}"),
            ));
        }
        Ok(())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.offset();
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(start, format!("{what} length overflows")))?;
        let raw = self.take(len, what)?;
        let mut out = Vec::with_capacity(n);
        for (k, c) in raw.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    start + 8 * k as u64,
                    format!("non-finite value in {what}"),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.offset(),
                format!(
                    "{} trailing bytes after declared payload",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        Ok(())
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::config(format!("{what} {v} does not fit in 32 bits")))
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Encodes samples that all share one grid shape.
pub fn encode_dataset(samples: &[DarcySample]) -> Result<Vec<u8>> {
    let (h, w) = samples.first().map(|s| s.a.shape()).unwrap_or((0, 0));
    if let Some(bad) = samples
        .iter()
        .find(|s| s.a.shape() != (h, w) || s.u.shape() != (h, w))
    {
        return Err(Error::shape(format!(
            "sample shapes {:?}/{:?} differ from {h}x{w}",
            bad.a.shape(),
            bad.u.shape()
        )));
    }
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + samples.len() * 2 * h * w * 8);
    out.extend_from_slice(DATASET_MAGIC);
    for v in [
        FORMAT_VERSION,
        to_u32(samples.len(), "sample count")?,
        to_u32(h, "height")?,
        to_u32(w, "width")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in samples {
        put_f64s(&mut out, s.a.data());
        put_f64s(&mut out, s.u.data());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<DarcySample>> {
    let mut c = Cursor::new(bytes);
    c.magic(DATASET_MAGIC)?;
    c.version()?;
    let count = c.u32("sample count")? as usize;
    let h = c.u32("height")? as usize;
    let w = c.u32("width")? as usize;
    let mut samples = Vec::with_capacity(count.min(bytes.len() / 16 + 1));
    for _ in 0..count {
        let a = ScalarGrid::new(h, w, c.f64s(h * w, "coefficient grid")?)?;
        let u = ScalarGrid::new(h, w, c.f64s(h * w, "solution grid")?)?;
        samples.push(DarcySample { a, u });
    }
    c.finish()?;
    Ok(samples)
}

pub fn write_dataset(mut w: impl Write, samples: &[DarcySample]) -> Result<()> {
    w.write_all(&encode_dataset(samples)?)?;
    Ok(())
}

pub fn read_dataset(mut r: impl Read) -> Result<Vec<DarcySample>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[DarcySample]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_dataset(&mut f, samples)?;
    f.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DarcySample>> {
    decode_dataset(&std::fs::read(path)?)
}

pub fn encode_checkpoint(params: &ModelParameters) -> Result<Vec<u8>> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(80 + params.values().len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        FORMAT_VERSION,
        cfg.variant.tag(),
        to_u32(cfg.width, "width")?,
        to_u32(cfg.modes, "modes")?,
        to_u32(cfg.layers, "layers")?,
        to_u32(cfg.in_channels, "input channels")?,
        to_u32(cfg.out_channels, "output channels")?,
        to_u32(cfg.projection_hidden, "projection width")?,
        to_u32(cfg.padding, "padding")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_f64s(&mut out, &params.normalization().to_array());
    out.extend_from_slice(&(params.values().len() as u64).to_le_bytes());
    put_f64s(&mut out, params.values());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParameters> {
    let mut c = Cursor::new(bytes);
    c.magic(CHECKPOINT_MAGIC)?;
    c.version()?;
    let tag_at = c.offset();
    let tag = c.u32("variant tag")?;
    let variant = Variant::from_tag(tag)
        .ok_or_else(|| Error::format(tag_at, format!("unknown variant tag {tag}")))?;
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = c.u32("model dimensions")? as usize;
    }
    let cfg = ModelConfig {
        variant,
        width: dims[0],
        modes: dims[1],
        layers: dims[2],
        in_channels: dims[3],
        out_channels: dims[4],
        projection_hidden: dims[5],
        padding: dims[6],
    };
    cfg.validate()?;
    let norm: [f64; 4] = c.f64s(4, "normalization")?.try_into().unwrap();
    let count_at = c.offset();
    let count = c.u64("parameter count")?;
    let expected = count_parameters(&cfg);
    if count != expected as u64 {
        return Err(Error::format(
            count_at,
            format!(
                "parameter count {count} does not match {expected} for the stored configuration"
            ),
        ));
    }
    let values = c.f64s(expected, "parameters")?;
    c.finish()?;
    ModelParameters::from_values(cfg, Normalization::from_array(norm), values)
}

pub fn write_checkpoint(mut w: impl Write, params: &ModelParameters) -> Result<()> {
    w.write_all(&encode_checkpoint(params)?)?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ModelParameters> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

/// Reads a checkpoint and rejects it unless it was saved for `expected`.
pub fn read_checkpoint_for(r: impl Read, expected: &ModelConfig) -> Result<ModelParameters> {
    let params = read_checkpoint(r)?;
    let got = params.config();
    if got.variant != expected.variant {
        return Err(Error::config(format!(
            "checkpoint holds a {} model, expected {}",
            got.variant, expected.variant
        )));
    }
    if got != expected {
        return Err(Error::config(format!(
            "checkpoint configuration {got:?} differs from {expected:?}"
        )));
    }
    Ok(params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParameters) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut f, params)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParameters> {
    decode_checkpoint(&std::fs::read(path)?)
}

pub const METRICS_HEADER: &str = "epoch,train_l2,test_l2,train_h2,test_h2";
pub const EVAL_HEADER: &str = "sample,l2,h2";
pub const PREDICTION_HEADER: &str = "i,j,a,truth,prediction";

/// One row per epoch under [`METRICS_HEADER`].
pub fn write_metrics_csv(mut w: impl Write, rows: &[EpochMetrics]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch, r.train_l2, r.test_l2, r.train_h2, r.test_h2
        )?;
    }
    Ok(())
}

/// One row per sample under [`EVAL_HEADER`], then a `mean` row.
pub fn write_eval_csv(mut w: impl Write, report: &MetricReport) -> Result<()> {
    writeln!(w, "{EVAL_HEADER}")?;
    for (k, (l2, h2)) in report.l2.iter().zip(&report.h2).enumerate() {
        writeln!(w, "{k},{l2},{h2}")?;
    }
    writeln!(w, "mean,{},{}", report.mean_l2, report.mean_h2)?;
    Ok(())
}

/// Long-format grid export: one row per node with the coefficient, the
/// reference solution and the model prediction.
pub fn write_prediction_csv(
    mut w: impl Write,
    a: &ScalarGrid,
    truth: &ScalarGrid,
    pred: &ScalarGrid,
) -> Result<()> {
    if a.shape() != truth.shape() || a.shape() != pred.shape() {
        return Err(Error::shape(
            "prediction export needs three grids of one shape",
        ));
    }
    writeln!(w, "{PREDICTION_HEADER}")?;
    for i in 0..a.height() {
        for j in 0..a.width() {
            writeln!(
                w,
                "{i},{j},{},{},{}",
                a.get(i, j),
                truth.get(i, j),
                pred.get(i, j)
            )?;
        }
    }
    Ok(())
}
