//! D4-constrained spectral kernels.
//!
//! An isotropic kernel is fully determined by one real value per channel pair
//! and per unordered mode pair `{p, q}` with `0 <= p <= q < m`. Expanding it
//! over the symmetric retained set assigns `R[k_x, k_y] = g[{|k_x|, k_y}]`,
//! which makes the kernel invariant under both reflections and the
//! transposition and keeps it real.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{ModeSet, ModeSetKind};

/// Number of unordered pairs `{p, q}` drawn from `0..m`.
pub fn generator_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Flat index of the unordered pair `{|p|, |q|}` in the triangular
/// enumeration `(0,0), (0,1), .., (0,m-1), (1,1), ..`.
pub fn generator_index(p: i64, q: i64, m: usize) -> Result<usize> {
    let (a, b) = (p.unsigned_abs() as usize, q.unsigned_abs() as usize);
    if a >= m || b >= m {
        return Err(Error::Bounds(format!(
            "mode pair ({p}, {q}) outside 0..{m}"
        )));
    }
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    Ok(lo * m - lo * lo.saturating_sub(1) / 2 + (hi - lo))
}

/// All full-spectrum modes that share the generator entry `{p, q}`:
/// sign flips of either coordinate and the swap.
pub fn generator_orbit(p: usize, q: usize) -> Vec<(i64, i64)> {
    let (p, q) = (p as i64, q as i64);
    let mut out = Vec::with_capacity(8);
    for (a, b) in [(p, q), (q, p)] {
        for sa in [1, -1] {
            for sb in [1, -1] {
                let slot = (sa * a, sb * b);
                if !out.contains(&slot) {
                    out.push(slot);
                }
            }
        }
    }
    out
}

/// Free parameters of one isotropic spectral layer.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoGenerator {
    c_out: usize,
    c_in: usize,
    modes: usize,
    values: Vec<f64>,
}

impl IsoGenerator {
    /// `values` is indexed `(o, i, t)` with `t` the pair index.
    pub fn new(c_out: usize, c_in: usize, modes: usize, values: Vec<f64>) -> Result<Self> {
        let expected = c_out * c_in * generator_len(modes);
        if c_out == 0 || c_in == 0 || modes == 0 || values.len() != expected {
            return Err(Error::shape(format!(
                "generator {c_out}x{c_in} at m={modes} needs {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("generator values must be finite".into()));
        }
        Ok(Self {
            c_out,
            c_in,
            modes,
            values,
        })
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, o: usize, i: usize, t: usize) -> f64 {
        self.values[(o * self.c_in + i) * generator_len(self.modes) + t]
    }
}

/// Complex channel-mixing matrix at every retained mode.
///
/// Weights are stored mode-major: `weights[(slot * c_out + o) * c_in + i]`,
/// with `slot` following [`ModeSet::frequencies`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralKernel {
    c_out: usize,
    c_in: usize,
    set: ModeSet,
    weights: Vec<Complex64>,
}

impl SpectralKernel {
    pub fn new(c_out: usize, c_in: usize, set: ModeSet, weights: Vec<Complex64>) -> Result<Self> {
        if c_out == 0 || c_in == 0 || weights.len() != c_out * c_in * set.len() {
            return Err(Error::shape(format!(
                "kernel {c_out}x{c_in} over {} modes needs {} weights, got {}",
                set.len(),
                c_out * c_in * set.len(),
                weights.len()
            )));
        }
        Ok(Self {
            c_out,
            c_in,
            set,
            weights,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize, set: ModeSet) -> Self {
        Self {
            c_out,
            c_in,
            set,
            weights: vec![Complex64::new(0.0, 0.0); c_out * c_in * set.len()],
        }
    }

    /// Builds a kernel from real/imaginary pairs stored `(o, i, slot, re|im)`.
    pub fn from_interleaved(
        c_out: usize,
        c_in: usize,
        set: ModeSet,
        values: &[f64],
    ) -> Result<Self> {
        let n = set.len();
        if values.len() != 2 * c_out * c_in * n {
            return Err(Error::shape(format!(
                "interleaved kernel needs {} values, got {}",
                2 * c_out * c_in * n,
                values.len()
            )));
        }
        let mut k = Self::zeros(c_out, c_in, set);
        for o in 0..c_out {
            for i in 0..c_in {
                let base = (o * c_in + i) * n * 2;
                for s in 0..n {
                    k.weights[(s * c_out + o) * c_in + i] =
                        Complex64::new(values[base + 2 * s], values[base + 2 * s + 1]);
                }
            }
        }
        Ok(k)
    }

    /// Inverse of [`SpectralKernel::from_interleaved`].
    pub fn to_interleaved(&self) -> Vec<f64> {
        let n = self.set.len();
        let mut out = vec![0.0; 2 * self.weights.len()];
        for o in 0..self.c_out {
            for i in 0..self.c_in {
                let base = (o * self.c_in + i) * n * 2;
                for s in 0..n {
                    let w = self.weights[(s * self.c_out + o) * self.c_in + i];
                    out[base + 2 * s] = w.re;
                    out[base + 2 * s + 1] = w.im;
                }
            }
        }
        out
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn mode_set(&self) -> ModeSet {
        self.set
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Complex64] {
        &mut self.weights
    }

    fn slot_of(&self, kx: i64, ky: i64) -> Option<usize> {
        let m = self.set.modes() as i64;
        if !(0..m).contains(&ky) {
            return None;
        }
        let row = self.set.row_frequencies().iter().position(|&r| r == kx)?;
        Some(row * self.set.modes() + ky as usize)
    }

    /// Weight at signed mode `(kx, ky)` with `ky >= 0`, if retained.
    pub fn get(&self, o: usize, i: usize, kx: i64, ky: i64) -> Option<Complex64> {
        self.slot_of(kx, ky)
            .map(|s| self.weights[(s * self.c_out + o) * self.c_in + i])
    }

    pub fn set_weight(
        &mut self,
        o: usize,
        i: usize,
        kx: i64,
        ky: i64,
        value: Complex64,
    ) -> Result<()> {
        let s = self
            .slot_of(kx, ky)
            .ok_or_else(|| Error::Bounds(format!("mode ({kx}, {ky}) not retained")))?;
        self.weights[(s * self.c_out + o) * self.c_in + i] = value;
        Ok(())
    }

    /// Weight as seen by the full spectrum: modes with `ky < 0` act through
    /// the conjugate of their Hermitian partner.
    fn get_full(&self, o: usize, i: usize, kx: i64, ky: i64) -> Option<Complex64> {
        if ky >= 0 {
            self.get(o, i, kx, ky)
        } else {
            self.get(o, i, -kx, -ky).map(|w| w.conj())
        }
    }
}

pub fn expand_generator(g: &IsoGenerator, set: ModeSet) -> Result<SpectralKernel> {
    if set.kind() != ModeSetKind::Symmetric || set.modes() != g.modes {
        return Err(Error::shape(format!(
            "generator with m={} needs the symmetric retained set of the same m, got {:?} m={}",
            g.modes,
            set.kind(),
            set.modes()
        )));
    }
    let t_len = generator_len(g.modes);
    let pairs: Vec<usize> = set
        .frequencies()
        .into_iter()
        .map(|(kx, ky)| generator_index(kx, ky, g.modes))
        .collect::<Result<_>>()?;
    let mut k = SpectralKernel::zeros(g.c_out, g.c_in, set);
    for (s, &t) in pairs.iter().enumerate() {
        for o in 0..g.c_out {
            for i in 0..g.c_in {
                k.weights[(s * g.c_out + o) * g.c_in + i] =
                    Complex64::new(g.values[(o * g.c_in + i) * t_len + t], 0.0);
            }
        }
    }
    Ok(k)
}

/// Adjoint of [`expand_generator`]: sums the real part of a kernel-shaped
/// cotangent over every slot that reads the same generator entry.
pub fn fold_into_generator(cotangent: &SpectralKernel, modes: usize) -> Result<Vec<f64>> {
    let set = cotangent.set;
    if set.kind() != ModeSetKind::Symmetric || set.modes() != modes {
        return Err(Error::shape(
            "cotangent does not live on the symmetric retained set",
        ));
    }
    let (c_out, c_in) = (cotangent.c_out, cotangent.c_in);
    let t_len = generator_len(modes);
    let mut out = vec![0.0; c_out * c_in * t_len];
    for (s, (kx, ky)) in set.frequencies().into_iter().enumerate() {
        let t = generator_index(kx, ky, modes)?;
        for o in 0..c_out {
            for i in 0..c_in {
                out[(o * c_in + i) * t_len + t] += cotangent.weights[(s * c_out + o) * c_in + i].re;
            }
        }
    }
    Ok(out)
}

/// Asymptotic parameter reduction of the isotropic kernel in `d` dimensions:
/// a factor 2 per axis reflection, 2 for realness, and `d!` for axis permutations.
pub fn reduction_factor(d: u32) -> Result<f64> {
    if d < 1 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let factorial: f64 = (1..=d).map(f64::from).product();
    Ok(2f64.powi(d as i32 + 1) * factorial)
}

/// Free real kernel parameters per channel pair in a standard layer.
pub fn standard_kernel_params(m: usize) -> usize {
    2 * (2 * m) * m
}

/// Free real kernel parameters per channel pair in an isotropic layer.
pub fn iso_kernel_params(m: usize) -> usize {
    generator_len(m)
}

/// Largest deviation from each symmetry relation over all channels and modes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymmetryReport {
    /// `max |R[k, l] - R[-k, l]|`
    pub reflection_x: f64,
    /// `max |R[k, l] - R[k, -l]|`, with negative `l` read through Hermitian storage.
    pub reflection_y: f64,
    /// `max |R[k, l] - R[l, k]|`
    pub transpose: f64,
    /// `max |Im R|`
    pub imaginary: f64,
}

impl SymmetryReport {
    pub fn max(&self) -> f64 {
        self.reflection_x
            .max(self.reflection_y)
            .max(self.transpose)
            .max(self.imaginary)
    }
}

pub fn verify_kernel_symmetry(k: &SpectralKernel) -> SymmetryReport {
    let mut r = SymmetryReport::default();
    let freqs = k.set.frequencies();
    for o in 0..k.c_out {
        for i in 0..k.c_in {
            for &(kx, ky) in &freqs {
                let w = k.get(o, i, kx, ky).expect("retained");
                r.imaginary = r.imaginary.max(w.im.abs());
                if let Some(p) = k.get_full(o, i, -kx, ky) {
                    r.reflection_x = r.reflection_x.max((w - p).norm());
                }
                if let Some(p) = k.get_full(o, i, kx, -ky) {
                    r.reflection_y = r.reflection_y.max((w - p).norm());
                }
                if let Some(p) = k.get_full(o, i, ky, kx) {
                    r.transpose = r.transpose.max((w - p).norm());
                }
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_generator(c_out: usize, c_in: usize, m: usize, seed: u64) -> IsoGenerator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = c_out * c_in * generator_len(m);
        IsoGenerator::new(
            c_out,
            c_in,
            m,
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn generator_index_enumeration() {
        assert_eq!(generator_index(0, 0, 2).unwrap(), 0);
        assert_eq!(generator_index(0, 1, 2).unwrap(), 1);
        assert_eq!(generator_index(1, 1, 2).unwrap(), 2);
        assert_eq!(
            generator_index(3, 5, 16).unwrap(),
            generator_index(5, 3, 16).unwrap()
        );
        assert_eq!(
            generator_index(-3, 5, 16).unwrap(),
            generator_index(3, 5, 16).unwrap()
        );
        assert_eq!(generator_index(15, 15, 16).unwrap(), 135);
        assert_eq!(generator_len(16), 136);
        assert!(matches!(generator_index(16, 0, 16), Err(Error::Bounds(_))));

        // Bijective onto 0..m(m+1)/2.
        let m = 7;
        let mut seen = vec![false; generator_len(m)];
        for p in 0..m as i64 {
            for q in p..m as i64 {
                let t = generator_index(p, q, m).unwrap();
                assert!(!seen[t]);
                seen[t] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn expansion_examples_m2() {
        let g = IsoGenerator::new(1, 1, 2, vec![1.5, -2.0, 3.25]).unwrap();
        let k = expand_generator(&g, ModeSet::symmetric(2).unwrap()).unwrap();
        let re = |kx, ky| k.get(0, 0, kx, ky).unwrap();
        assert_eq!(re(0, 0), Complex64::new(1.5, 0.0));
        assert_eq!(re(1, 1), Complex64::new(3.25, 0.0));
        assert_eq!(re(-1, 0), Complex64::new(-2.0, 0.0));
        assert_eq!(re(0, 1), Complex64::new(-2.0, 0.0));
        assert_eq!(re(-1, 1), Complex64::new(3.25, 0.0));
    }

    #[test]
    fn expansion_is_symmetric_by_construction() {
        let g = random_generator(3, 2, 16, 1);
        let k = expand_generator(&g, ModeSet::symmetric(16).unwrap()).unwrap();
        assert_eq!(k.mode_set().len(), 31 * 16);
        for o in 0..3 {
            for i in 0..2 {
                assert_eq!(k.get(o, i, -7, 3), k.get(o, i, 3, 7));
                for (kx, ky) in k.mode_set().frequencies() {
                    let t = generator_index(kx, ky, 16).unwrap();
                    // Bitwise round trip through the generator index.
                    assert_eq!(
                        k.get(o, i, kx, ky).unwrap().re.to_bits(),
                        g.get(o, i, t).to_bits()
                    );
                }
            }
        }
        let rep = verify_kernel_symmetry(&k);
        assert_eq!(rep, SymmetryReport::default());
    }

    #[test]
    fn expansion_rejects_wrong_set() {
        let g = random_generator(1, 1, 4, 2);
        assert!(expand_generator(&g, ModeSet::standard(4).unwrap()).is_err());
        assert!(expand_generator(&g, ModeSet::symmetric(5).unwrap()).is_err());
    }

    #[test]
    fn expansion_is_linear() {
        let a = random_generator(2, 2, 5, 3);
        let b = random_generator(2, 2, 5, 4);
        let set = ModeSet::symmetric(5).unwrap();
        let combo = IsoGenerator::new(
            2,
            2,
            5,
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| 2.0 * x - 0.5 * y)
                .collect(),
        )
        .unwrap();
        let ka = expand_generator(&a, set).unwrap();
        let kb = expand_generator(&b, set).unwrap();
        let kc = expand_generator(&combo, set).unwrap();
        for ((x, y), z) in ka.weights().iter().zip(kb.weights()).zip(kc.weights()) {
            assert!((2.0 * x - 0.5 * y - z).norm() < 1e-15);
        }
    }

    #[test]
    fn random_kernel_violates_symmetry() {
        let set = ModeSet::symmetric(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = (0..set.len() * 4)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let k = SpectralKernel::new(2, 2, set, w).unwrap();
        let rep = verify_kernel_symmetry(&k);
        assert!(rep.reflection_x > 0.1 && rep.transpose > 0.1 && rep.imaginary > 0.1);
    }

    #[test]
    fn single_perturbation_shows_up_in_transpose_violation() {
        let g = random_generator(1, 1, 8, 6);
        let mut k = expand_generator(&g, ModeSet::symmetric(8).unwrap()).unwrap();
        let eps = 1e-3;
        let w = k.get(0, 0, 2, 5).unwrap();
        k.set_weight(0, 0, 2, 5, w + eps).unwrap();
        let rep = verify_kernel_symmetry(&k);
        assert!((rep.transpose - eps).abs() < 1e-15);
        assert_eq!(rep.imaginary, 0.0);
    }

    #[test]
    fn reduction_factors() {
        assert_eq!(reduction_factor(1).unwrap(), 4.0);
        assert_eq!(reduction_factor(2).unwrap(), 16.0);
        assert_eq!(reduction_factor(3).unwrap(), 96.0);
        assert!(reduction_factor(0).is_err());
    }

    #[test]
    fn per_pair_counts() {
        assert_eq!(standard_kernel_params(16), 1024);
        assert_eq!(iso_kernel_params(16), 136);
        let ratio = standard_kernel_params(16) as f64 / iso_kernel_params(16) as f64;
        assert!((ratio - 7.529).abs() < 1e-3);
    }

    #[test]
    fn orbit_sizes() {
        assert_eq!(generator_orbit(2, 5).len(), 8);
        assert_eq!(generator_orbit(3, 3).len(), 4);
        assert_eq!(generator_orbit(0, 4).len(), 4);
        assert_eq!(generator_orbit(0, 0).len(), 1);
        // Half-spectrum slots (ky >= 0) that read entry {2, 5}.
        let set = ModeSet::symmetric(8).unwrap();
        let t = generator_index(2, 5, 8).unwrap();
        let slots: Vec<_> = set
            .frequencies()
            .into_iter()
            .filter(|&(kx, ky)| generator_index(kx, ky, 8).unwrap() == t)
            .collect();
        assert_eq!(slots.len(), 4);
        assert!(slots.iter().all(|s| generator_orbit(2, 5).contains(s)));
    }

    #[test]
    fn interleaved_round_trip() {
        let set = ModeSet::standard(3).unwrap();
        let vals: Vec<f64> = (0..2 * 2 * 3 * set.len()).map(|v| v as f64).collect();
        let k = SpectralKernel::from_interleaved(2, 3, set, &vals).unwrap();
        assert_eq!(k.to_interleaved(), vals);
        assert_eq!(
            k.get(0, 1, 0, 0).unwrap(),
            Complex64::new(2.0 * set.len() as f64, 2.0 * set.len() as f64 + 1.0)
        );
    }
}
