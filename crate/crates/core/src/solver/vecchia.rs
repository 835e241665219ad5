//! Vecchia block approximation `V⁻¹ = Σ_j L_j' V_j⁻¹ L_j` of an inverse
//! covariance over the observed sites.
//!
//! Observed sites are grouped by the 2×2 tile of the base lattice they fall
//! in, tiles taken row by row. Each block conditions on observed sites of
//! earlier tiles chosen by a [`ConditioningRule`]. Blocks whose prediction
//! and conditioning offsets coincide share one factorization.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::lattice::{EmbeddingSpec, ObservationMask};

/// Lag in grid steps.
pub type Offset = (i32, i32);

/// How conditioning sets are chosen for a 2×2 prediction tile anchored at
/// `(2ti, 2tj)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditioningRule {
    /// Fixed stencil of depth `h`: rows `-h..=-1` over columns
    /// `-h..=h+2`, plus columns `-h..=-1` of the tile's own two rows,
    /// `2h² + 5h` sites (18, 33, 52 for `h` = 2, 3, 4). Missing sites simply
    /// drop out, so conditioning thins out around gaps in the data.
    Stencil(usize),
    /// The `m` observed sites of earlier tiles nearest to the tile center,
    /// ties broken by lower linear index.
    Nearest(usize),
}

impl ConditioningRule {
    /// The stencil when `size` is a stencil size, nearest neighbors otherwise.
    pub fn for_size(size: usize) -> Self {
        (1..=16)
            .find(|h| stencil_size(*h) == size)
            .map(ConditioningRule::Stencil)
            .unwrap_or(ConditioningRule::Nearest(size))
    }

    pub fn max_size(&self) -> usize {
        match *self {
            ConditioningRule::Stencil(h) => stencil_size(h),
            ConditioningRule::Nearest(m) => m,
        }
    }
}

pub fn stencil_size(h: usize) -> usize {
    2 * h * h + 5 * h
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub pred: Vec<Offset>,
    pub cond: Vec<Offset>,
}

#[derive(Debug, Clone)]
pub struct Block {
    /// Positions within the observed ordering.
    pub pred: Vec<usize>,
    pub cond: Vec<usize>,
    /// Index into [`VecchiaLayout::signatures`].
    pub signature: usize,
}

/// Block geometry for one observation mask and conditioning rule.
#[derive(Debug, Clone)]
pub struct VecchiaLayout {
    pub n: usize,
    pub cond_size: usize,
    pub blocks: Vec<Block>,
    pub signatures: Vec<Signature>,
}

impl VecchiaLayout {
    /// Layout with [`ConditioningRule::for_size`]`(cond_size)`.
    pub fn build(emb: &EmbeddingSpec, mask: &ObservationMask, cond_size: usize) -> Self {
        Self::with_rule(emb, mask, ConditioningRule::for_size(cond_size))
    }

    pub fn with_rule(emb: &EmbeddingSpec, mask: &ObservationMask, rule: ConditioningRule) -> Self {
        let (n1, n2) = (emb.base.n1, emb.base.n2);
        let (t1, t2) = (n1.div_ceil(2), n2.div_ceil(2));
        // Observed position of every base site, if observed.
        let mut pos = vec![usize::MAX; n1 * n2];
        for (p, &k) in mask.observed.iter().enumerate() {
            let (i, j) = emb.coords(k);
            pos[i * n2 + j] = p;
        }
        let tile_of = |i: usize, j: usize| (i / 2) * t2 + j / 2;

        let mut blocks = Vec::new();
        let mut sig_index: HashMap<Signature, usize> = HashMap::new();
        let mut signatures = Vec::new();
        // (squared distance to tile center, linear index, i, j)
        let mut cand: Vec<(f64, usize, usize, usize)> = Vec::new();

        for ti in 0..t1 {
            for tj in 0..t2 {
                let tile = ti * t2 + tj;
                let (ai, aj) = (2 * ti, 2 * tj);
                let mut pred = Vec::new();
                let mut pred_off = Vec::new();
                for i in ai..(ai + 2).min(n1) {
                    for j in aj..(aj + 2).min(n2) {
                        if pos[i * n2 + j] != usize::MAX {
                            pred.push(pos[i * n2 + j]);
                            pred_off.push(((i - ai) as i32, (j - aj) as i32));
                        }
                    }
                }
                if pred.is_empty() {
                    continue;
                }
                let (ci, cj) = (ai as f64 + 0.5, aj as f64 + 0.5);
                let push = |cand: &mut Vec<_>, i: usize, j: usize| {
                    let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    cand.push((d2, i * n2 + j, i, j));
                };
                cand.clear();
                match rule {
                    ConditioningRule::Stencil(h) => {
                        let (ai, aj, h) = (ai as i64, aj as i64, h as i64);
                        let mut visit = |di: i64, dj: i64| {
                            let (i, j) = (ai + di, aj + dj);
                            if i >= 0 && j >= 0 && (i as usize) < n1 && (j as usize) < n2 {
                                let (i, j) = (i as usize, j as usize);
                                if pos[i * n2 + j] != usize::MAX {
                                    push(&mut cand, i, j);
                                }
                            }
                        };
                        for di in -h..0 {
                            for dj in -h..=h + 2 {
                                visit(di, dj);
                            }
                        }
                        for di in 0..2 {
                            for dj in -h..0 {
                                visit(di, dj);
                            }
                        }
                    }
                    ConditioningRule::Nearest(m) if m > 0 => {
                        let mut radius = (m as f64).sqrt().ceil() + 2.0;
                        loop {
                            cand.clear();
                            let i_lo = (ci - radius).floor().max(0.0) as usize;
                            let i_hi = ((ci + radius).ceil() as usize).min(n1 - 1);
                            let j_lo = (cj - radius).floor().max(0.0) as usize;
                            let j_hi = ((cj + radius).ceil() as usize).min(n2 - 1);
                            for i in i_lo..=i_hi {
                                for j in j_lo..=j_hi {
                                    if pos[i * n2 + j] != usize::MAX && tile_of(i, j) < tile {
                                        push(&mut cand, i, j);
                                    }
                                }
                            }
                            let covers_all =
                                i_lo == 0 && j_lo == 0 && i_hi == n1 - 1 && j_hi == n2 - 1;
                            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                            // Everything within `radius` of the center is inside the box.
                            let enough = cand.len() >= m && cand[m - 1].0.sqrt() <= radius;
                            if enough || covers_all {
                                break;
                            }
                            radius *= 2.0;
                        }
                        cand.truncate(m);
                    }
                    ConditioningRule::Nearest(_) => {}
                }
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let cond: Vec<usize> = cand.iter().map(|&(_, lin, _, _)| pos[lin]).collect();
                let cond_off = cand
                    .iter()
                    .map(|&(_, _, i, j)| (i as i32 - ai as i32, j as i32 - aj as i32))
                    .collect();
                let sig = Signature {
                    pred: pred_off,
                    cond: cond_off,
                };
                let signature = *sig_index.entry(sig.clone()).or_insert_with(|| {
                    signatures.push(sig);
                    signatures.len() - 1
                });
                blocks.push(Block {
                    pred,
                    cond,
                    signature,
                });
            }
        }
        Self {
            n: mask.n(),
            cond_size: rule.max_size(),
            blocks,
            signatures,
        }
    }

    /// Layout from explicit `(prediction, conditioning)` position lists.
    /// `coords` gives the lattice coordinates of every observed position;
    /// offsets are taken relative to the first prediction site of a block.
    pub fn from_blocks(coords: &[(usize, usize)], sets: Vec<(Vec<usize>, Vec<usize>)>) -> Result<Self> {
        let n = coords.len();
        let mut seen = vec![false; n];
        let mut blocks = Vec::new();
        let mut sig_index: HashMap<Signature, usize> = HashMap::new();
        let mut signatures = Vec::new();
        let mut cond_size = 0;
        for (pred, cond) in sets {
            let &first = pred
                .first()
                .ok_or_else(|| Error::invalid("empty prediction set"))?;
            for &p in &pred {
                if p >= n || seen[p] {
                    return Err(Error::invalid("prediction sets must partition the observed sites"));
                }
                seen[p] = true;
            }
            if cond.iter().any(|&c| c >= n || !seen[c] || pred.contains(&c)) {
                return Err(Error::invalid(
                    "conditioning sets may only hold sites of earlier blocks",
                ));
            }
            cond_size = cond_size.max(cond.len());
            let anchor = coords[first];
            let off = |p: &usize| {
                let (i, j) = coords[*p];
                (i as i32 - anchor.0 as i32, j as i32 - anchor.1 as i32)
            };
            let sig = Signature {
                pred: pred.iter().map(off).collect(),
                cond: cond.iter().map(off).collect(),
            };
            let signature = *sig_index.entry(sig.clone()).or_insert_with(|| {
                signatures.push(sig);
                signatures.len() - 1
            });
            blocks.push(Block {
                pred,
                cond,
                signature,
            });
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("prediction sets must cover every observed site"));
        }
        Ok(Self {
            n,
            cond_size,
            blocks,
            signatures,
        })
    }
}

/// Regression factors shared by all blocks with one signature.
#[derive(Debug, Clone)]
pub struct BlockFactor {
    /// `K = Σ_AB Σ_BB⁻¹`, `n_j × m_j`.
    pub k: DMatrix<f64>,
    /// `V⁻¹` with `V = Σ_AA − K Σ_BA`.
    pub v_inv: DMatrix<f64>,
    pub logdet_v: f64,
}

fn cholesky_with_jitter(mut m: DMatrix<f64>, block: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch);
    }
    for i in 0..m.nrows() {
        let d = m[(i, i)];
        m[(i, i)] = d + 1e-10 * d.abs();
    }
    m.cholesky()
        .ok_or(Error::SingularConditioningSet { block })
}

impl BlockFactor {
    fn new(sig: &Signature, cov: &dyn Fn(i32, i32) -> f64, block: usize) -> Result<Self> {
        let lag = |a: Offset, b: Offset| cov(a.0 - b.0, a.1 - b.1);
        let (na, nb) = (sig.pred.len(), sig.cond.len());
        let s_aa = DMatrix::from_fn(na, na, |r, c| lag(sig.pred[r], sig.pred[c]));
        let (k, v) = if nb == 0 {
            (DMatrix::zeros(na, 0), s_aa)
        } else {
            let s_bb = DMatrix::from_fn(nb, nb, |r, c| lag(sig.cond[r], sig.cond[c]));
            let s_ba = DMatrix::from_fn(nb, na, |r, c| lag(sig.cond[r], sig.pred[c]));
            let ch = cholesky_with_jitter(s_bb, block)?;
            // K' = Σ_BB⁻¹ Σ_BA
            let kt = ch.solve(&s_ba);
            let v = &s_aa - kt.transpose() * &s_ba;
            (kt.transpose(), v)
        };
        let v = (&v + v.transpose()) * 0.5;
        let ch = cholesky_with_jitter(v, block)?;
        let logdet_v = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            k,
            v_inv: ch.inverse(),
            logdet_v,
        })
    }
}

/// The Vecchia precision approximation for one covariance function.
#[derive(Debug, Clone)]
pub struct VecchiaPrecond {
    pub layout: Arc<VecchiaLayout>,
    pub factors: Vec<BlockFactor>,
}

impl VecchiaPrecond {
    /// `cov(di, dj)` is the covariance between sites `(di, dj)` grid steps apart.
    pub fn build(layout: Arc<VecchiaLayout>, cov: &dyn Fn(i32, i32) -> f64) -> Result<Self> {
        let mut first_block = vec![0; layout.signatures.len()];
        for (b, blk) in layout.blocks.iter().enumerate().rev() {
            first_block[blk.signature] = b;
        }
        let factors = layout
            .signatures
            .iter()
            .zip(&first_block)
            .map(|(sig, &b)| BlockFactor::new(sig, cov, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layout, factors })
    }

    /// Distinct factorizations stored.
    pub fn cache_size(&self) -> usize {
        self.factors.len()
    }

    fn residual(&self, blk: &Block, f: &BlockFactor, x: &[f64]) -> DVector<f64> {
        let xa = DVector::from_iterator(blk.pred.len(), blk.pred.iter().map(|&p| x[p]));
        if blk.cond.is_empty() {
            return xa;
        }
        let xb = DVector::from_iterator(blk.cond.len(), blk.cond.iter().map(|&p| x[p]));
        xa - &f.k * xb
    }

    /// `V⁻¹ x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.layout.n, x.len())?;
        let mut w = vec![0.0; x.len()];
        for blk in &self.layout.blocks {
            let f = &self.factors[blk.signature];
            let u = &f.v_inv * self.residual(blk, f, x);
            for (&p, &v) in blk.pred.iter().zip(u.iter()) {
                w[p] += v;
            }
            if !blk.cond.is_empty() {
                let ku = f.k.tr_mul(&u);
                for (&p, &v) in blk.cond.iter().zip(ku.iter()) {
                    w[p] -= v;
                }
            }
        }
        Ok(w)
    }

    /// `(Σ_j ln|V_j|, x'V⁻¹x)`, the two data-dependent terms of the
    /// approximate Gaussian loglikelihood of `x`.
    pub fn logdet_and_quad(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_len(self.layout.n, x.len())?;
        let mut logdet = 0.0;
        let mut quad = 0.0;
        for blk in &self.layout.blocks {
            let f = &self.factors[blk.signature];
            let l = self.residual(blk, f, x);
            logdet += f.logdet_v;
            quad += l.dot(&(&f.v_inv * &l));
        }
        Ok((logdet, quad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_mask, DesignSpec, LatticeSpec};
    use rand::SeedableRng;

    fn setup(n: usize, design: DesignSpec) -> (EmbeddingSpec, ObservationMask) {
        let base = LatticeSpec::new(n, n, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        let emb = EmbeddingSpec::new(base, 1.5).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let mask = make_mask(&emb, &design, &mut rng).unwrap();
        (emb, mask)
    }

    #[test]
    fn blocks_partition_and_respect_order() {
        let (emb, mask) = setup(9, DesignSpec::Random(0.3));
        let layout = VecchiaLayout::build(&emb, &mask, 18);
        let mut seen = vec![false; mask.n()];
        for blk in &layout.blocks {
            assert!(!blk.pred.is_empty() && blk.pred.len() <= 4);
            assert!(blk.cond.len() <= 18);
            for &c in &blk.cond {
                assert!(seen[c], "conditioning on a later site");
            }
            for &p in &blk.pred {
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(layout.blocks[0].cond.is_empty());
    }

    #[test]
    fn complete_lattice_reuses_geometry() {
        let (emb, mask) = setup(32, DesignSpec::Complete);
        let layout = VecchiaLayout::build(&emb, &mask, 18);
        assert_eq!(layout.blocks.len(), 256);
        assert!(layout.signatures.len() < 60, "{}", layout.signatures.len());
    }

    #[test]
    fn first_block_is_marginal() {
        let (emb, mask) = setup(4, DesignSpec::Complete);
        let layout = Arc::new(VecchiaLayout::build(&emb, &mask, 3));
        let cov = |di: i32, dj: i32| (-((di * di + dj * dj) as f64).sqrt() / 2.0).exp();
        let pre = VecchiaPrecond::build(layout.clone(), &cov).unwrap();
        let f = &pre.factors[layout.blocks[0].signature];
        assert_eq!(f.k.ncols(), 0);
        assert_eq!(pre.apply(&vec![0.0; 16]).unwrap(), vec![0.0; 16]);
    }
}
