//! Observation lattices, their toroidal embeddings and missingness designs.
//!
//! Sites of the base lattice sit at `(i·δ, j·δ)` for `0 ≤ i < n1`, `0 ≤ j < n2`
//! with `δ = s / n1` (half-open grid). The base lattice occupies the top-left
//! corner of the embedding lattice, whose linear index is `i·N2 + j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub n1: usize,
    pub n2: usize,
    pub s: f64,
    pub delta: f64,
}

impl LatticeSpec {
    pub fn new(n1: usize, n2: usize, s: f64) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::invalid(format!(
                "lattice must be at least 2x2, got {n1}x{n2}"
            )));
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::invalid(format!("side length must be positive, got {s}")));
        }
        Ok(Self {
            n1,
            n2,
            s,
            delta: s / n1 as f64,
        })
    }

    pub fn sites(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.delta, j as f64 * self.delta)
    }

    /// Length of the diagonal of the base domain, `δ·√(n1² + n2²)`.
    ///
    /// Correlation distances are measured in units of this length when the
    /// cutoff modification is applied, so the base domain always lies within
    /// normalized distance 1.
    pub fn diameter(&self) -> f64 {
        self.delta * ((self.n1 * self.n1 + self.n2 * self.n2) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingSpec {
    pub base: LatticeSpec,
    /// Embedding rows.
    pub n1: usize,
    /// Embedding columns.
    pub n2: usize,
    pub r_factor: f64,
    /// Cutoff radius in spatial units.
    pub r: f64,
    /// Torus period `N1·δ` in spatial units. At least `2r`; equal to it when
    /// no rounding up to an FFT-friendly size was needed.
    pub period: f64,
}

impl EmbeddingSpec {
    /// Embeds `base` in a square torus large enough to hold a disc of radius
    /// `r = r_factor·D/√2` (`D` the base diameter, so `r = r_factor·s` for a
    /// square base) twice over. The side is rounded up to the next 5-smooth
    /// integer.
    pub fn new(base: LatticeSpec, r_factor: f64) -> Result<Self> {
        if !(r_factor.is_finite() && r_factor >= 1.0) {
            return Err(Error::invalid(format!("r_factor must be >= 1, got {r_factor}")));
        }
        let diag = ((base.n1 * base.n1 + base.n2 * base.n2) as f64).sqrt();
        let target = 2.0 * r_factor * diag / std::f64::consts::SQRT_2;
        // Guard against 47.999999 -> 48 style roundoff before taking the ceiling.
        let target = if (target - target.round()).abs() < 1e-9 {
            target.round()
        } else {
            target.ceil()
        };
        let min_side = (target as usize).max(2 * base.n1.max(base.n2));
        let side = next_smooth(min_side);
        Ok(Self {
            base,
            n1: side,
            n2: side,
            r_factor,
            r: r_factor * base.diameter() / std::f64::consts::SQRT_2,
            period: side as f64 * base.delta,
        })
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Cutoff radius in normalized distance units (base diameter = 1).
    pub fn normalized_radius(&self) -> f64 {
        self.r / self.base.diameter()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n2 + j
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.n2, k % self.n2)
    }

    /// Embedding index of base site `k = i·n2 + j`.
    pub fn base_to_embedding(&self, k: usize) -> usize {
        let (i, j) = (k / self.base.n2, k % self.base.n2);
        self.index(i, j)
    }

    pub fn in_base(&self, k: usize) -> bool {
        let (i, j) = self.coords(k);
        i < self.base.n1 && j < self.base.n2
    }

    /// Per-axis wrapped lags in grid steps.
    pub fn wrap_lag(&self, a: usize, b: usize) -> (usize, usize) {
        let (ai, aj) = self.coords(a);
        let (bi, bj) = self.coords(b);
        let di = ai.abs_diff(bi);
        let dj = aj.abs_diff(bj);
        (di.min(self.n1 - di), dj.min(self.n2 - dj))
    }

    pub fn wrap_distance(&self, a: usize, b: usize) -> f64 {
        let (di, dj) = self.wrap_lag(a, b);
        self.base.delta * ((di * di + dj * dj) as f64).sqrt()
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignSpec {
    Complete,
    /// Each base site independently missing with probability `p`.
    Random(f64),
    /// A centered disk holding a fraction `p` of the base sites is missing.
    Disk(f64),
    /// Explicit observed flags over the base lattice, row-major.
    Explicit(Vec<bool>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignTag {
    Complete,
    Random,
    Disk,
    File,
}

impl DesignTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DesignTag::Complete => "complete",
            DesignTag::Random => "random",
            DesignTag::Disk => "disk",
            DesignTag::File => "file",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    pub observed: Vec<usize>,
    pub unobserved: Vec<usize>,
    pub design: DesignTag,
    /// Position of each embedding index within `observed` or `unobserved`.
    slot: Vec<Slot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Observed(usize),
    Unobserved(usize),
}

impl ObservationMask {
    pub fn from_base_flags(emb: &EmbeddingSpec, flags: &[bool], design: DesignTag) -> Result<Self> {
        crate::error::check_len(emb.base.sites(), flags.len())?;
        let mut is_obs = vec![false; emb.len()];
        for (k, &f) in flags.iter().enumerate() {
            if f {
                is_obs[emb.base_to_embedding(k)] = true;
            }
        }
        let mut observed = Vec::new();
        let mut unobserved = Vec::new();
        let mut slot = Vec::with_capacity(emb.len());
        for (k, &o) in is_obs.iter().enumerate() {
            if o {
                slot.push(Slot::Observed(observed.len()));
                observed.push(k);
            } else {
                slot.push(Slot::Unobserved(unobserved.len()));
                unobserved.push(k);
            }
        }
        Ok(Self {
            observed,
            unobserved,
            design,
            slot,
        })
    }

    pub fn n(&self) -> usize {
        self.observed.len()
    }

    pub fn total(&self) -> usize {
        self.slot.len()
    }

    pub fn slot(&self, k: usize) -> Slot {
        self.slot[k]
    }

    pub fn is_observed(&self, k: usize) -> bool {
        matches!(self.slot[k], Slot::Observed(_))
    }

    /// True when every embedding site is observed, i.e. no conditional
    /// simulation is needed.
    pub fn is_full(&self) -> bool {
        self.unobserved.is_empty()
    }

    /// Observed flags over the base lattice, row-major.
    pub fn base_flags(&self, emb: &EmbeddingSpec) -> Vec<bool> {
        (0..emb.base.sites())
            .map(|k| self.is_observed(emb.base_to_embedding(k)))
            .collect()
    }

    /// Zero-padded embedding vector holding `x_o` at the observed sites.
    pub fn scatter(&self, x_o: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.total()];
        for (&k, &v) in self.observed.iter().zip(x_o) {
            out[k] = v;
        }
        out
    }

    pub fn gather_observed(&self, x: &[f64]) -> Vec<f64> {
        self.observed.iter().map(|&k| x[k]).collect()
    }

    pub fn gather_unobserved(&self, x: &[f64]) -> Vec<f64> {
        self.unobserved.iter().map(|&k| x[k]).collect()
    }

    /// Full embedding vector assembled from observed and unobserved parts.
    pub fn assemble(&self, x_o: &[f64], x_u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.total()];
        for (&k, &v) in self.observed.iter().zip(x_o) {
            out[k] = v;
        }
        for (&k, &v) in self.unobserved.iter().zip(x_u) {
            out[k] = v;
        }
        out
    }
}

pub fn make_mask<R: Rng + ?Sized>(
    emb: &EmbeddingSpec,
    design: &DesignSpec,
    rng: &mut R,
) -> Result<ObservationMask> {
    let sites = emb.base.sites();
    let check_p = |p: f64| {
        if (0.0..1.0).contains(&p) {
            Ok(())
        } else {
            Err(Error::invalid(format!("missing fraction must lie in [0, 1), got {p}")))
        }
    };
    let (flags, tag) = match design {
        DesignSpec::Complete => (vec![true; sites], DesignTag::Complete),
        DesignSpec::Random(p) => {
            check_p(*p)?;
            let flags = (0..sites).map(|_| rng.random::<f64>() >= *p).collect();
            (flags, DesignTag::Random)
        }
        DesignSpec::Disk(p) => {
            check_p(*p)?;
            (disk_flags(&emb.base, *p), DesignTag::Disk)
        }
        DesignSpec::Explicit(f) => (f.clone(), DesignTag::File),
    };
    ObservationMask::from_base_flags(emb, &flags, tag)
}

/// Removes the `round(p·n1·n2)` sites closest to the base centroid, ties
/// broken by linear index, which yields a centered digital disk.
fn disk_flags(base: &LatticeSpec, p: f64) -> Vec<bool> {
    let sites = base.sites();
    let ci = (base.n1 as f64 - 1.0) / 2.0;
    let cj = (base.n2 as f64 - 1.0) / 2.0;
    let mut order: Vec<(f64, usize)> = (0..sites)
        .map(|k| {
            let di = (k / base.n2) as f64 - ci;
            let dj = (k % base.n2) as f64 - cj;
            (di * di + dj * dj, k)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let missing = (p * sites as f64).round() as usize;
    let mut flags = vec![true; sites];
    for &(_, k) in order.iter().take(missing) {
        flags[k] = false;
    }
    flags
}

/// Parses a mask file: one line per base row, `o` observed and `.` missing.
/// Returns `(n1, n2, flags)`.
pub fn parse_mask_text(text: &str) -> Result<(usize, usize, Vec<bool>)> {
    let mut flags = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let row: Vec<bool> = line
            .chars()
            .map(|ch| match ch {
                'o' => Ok(true),
                '.' => Ok(false),
                other => Err(Error::invalid(format!(
                    "mask line {}: unexpected character {other:?}",
                    lineno + 1
                ))),
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::invalid(format!(
                    "mask line {} has {} columns, expected {w}",
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        flags.extend(row);
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::invalid("mask file is empty"))?;
    Ok((rows, width, flags))
}

pub fn format_mask_text(n2: usize, flags: &[bool]) -> String {
    let mut out = String::with_capacity(flags.len() + flags.len() / n2.max(1));
    for row in flags.chunks(n2) {
        out.extend(row.iter().map(|&f| if f { 'o' } else { '.' }));
        out.push('\n');
    }
    out
}
