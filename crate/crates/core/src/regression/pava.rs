use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum pooled weight per isotonic level.
pub const DEFAULT_MIN_POOL_WEIGHT: f64 = 20.0;

/// Non-decreasing, right-continuous step function.
///
/// With breakpoints `b_1 < ... < b_L` and levels `l_0 <= ... <= l_L`,
/// `f(x) = l_j` for `b_j <= x < b_{j+1}`; values outside the breakpoint range
/// clamp to the boundary levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
    #[serde(skip)]
    weights: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if levels.len() != breakpoints.len() + 1 {
            return Err(Error::invalid("step function needs one more level than breakpoints"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("breakpoints must be strictly increasing"));
        }
        if levels.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid("levels must be non-decreasing"));
        }
        Ok(StepFunction {
            breakpoints,
            levels,
            weights: Vec::new(),
        })
    }

    pub fn constant(c: f64) -> Self {
        StepFunction {
            breakpoints: Vec::new(),
            levels: vec![c],
            weights: Vec::new(),
        }
    }

    /// Index of the level applied at `x`.
    pub fn level_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= x)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.levels[self.level_index(x)]
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Pooled sample weight behind each level (empty when not fitted).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// A contiguous run of score groups pooled to one level.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub start: usize,
    pub sum_wy: f64,
    pub sum_w: f64,
}

impl Block {
    pub fn mean(&self) -> f64 {
        self.sum_wy / self.sum_w
    }

    fn absorb(&mut self, other: &Block) {
        self.start = self.start.min(other.start);
        self.sum_wy += other.sum_wy;
        self.sum_w += other.sum_w;
    }
}

/// Weighted pool-adjacent-violators over ordered groups, followed by greedy
/// merging of levels whose pooled weight is below `min_pool_weight`.
///
/// Groups with zero weight are skipped. Returned block means are strictly
/// increasing.
pub(crate) fn pava_blocks(sum_wy: &[f64], sum_w: &[f64], min_pool_weight: f64) -> Vec<Block> {
    let mut stack: Vec<Block> = Vec::with_capacity(sum_w.len());
    for (g, (&wy, &w)) in sum_wy.iter().zip(sum_w).enumerate() {
        if w <= 0.0 {
            continue;
        }
        let mut cur = Block {
            start: g,
            sum_wy: wy,
            sum_w: w,
        };
        while let Some(top) = stack.last() {
            // top.mean >= cur.mean, cross-multiplied
            if top.sum_wy * cur.sum_w >= cur.sum_wy * top.sum_w {
                let top = stack.pop().unwrap();
                cur.absorb(&top);
            } else {
                break;
            }
        }
        stack.push(cur);
    }
    merge_light_blocks(&mut stack, min_pool_weight);
    stack
}

fn merge_light_blocks(blocks: &mut Vec<Block>, min_pool_weight: f64) {
    while blocks.len() > 1 {
        let (idx, lightest) = blocks
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, b)| {
                if b.sum_w < acc.1 {
                    (i, b.sum_w)
                } else {
                    acc
                }
            });
        if lightest >= min_pool_weight {
            break;
        }
        let last = blocks.len() - 1;
        let other = if idx == 0 {
            1
        } else if idx == last {
            idx - 1
        } else {
            let m = blocks[idx].mean();
            let dl = m - blocks[idx - 1].mean();
            let dr = blocks[idx + 1].mean() - m;
            if dl < dr || (dl == dr && blocks[idx - 1].sum_w <= blocks[idx + 1].sum_w) {
                idx - 1
            } else {
                idx + 1
            }
        };
        let (lo, hi) = if other < idx { (other, idx) } else { (idx, other) };
        let absorbed = blocks.remove(hi);
        blocks[lo].absorb(&absorbed);
    }
}

/// Sorted distinct scores and each observation's group.
#[derive(Debug, Clone)]
pub(crate) struct IsotonicDesign {
    xs: Vec<f64>,
    group_of: Vec<usize>,
}

impl IsotonicDesign {
    pub fn new(x: &[f64]) -> Result<Self> {
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("isotonic scores must not be NaN"));
        }
        let mut xs = x.to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        let group_of = x
            .iter()
            .map(|v| xs.partition_point(|u| u < v))
            .collect();
        Ok(IsotonicDesign { xs, group_of })
    }

    pub fn n_groups(&self) -> usize {
        self.xs.len()
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    /// Largest group whose score is `<= x`, clamped to the first group.
    pub fn rank(&self, x: f64) -> usize {
        self.xs.partition_point(|&u| u <= x).saturating_sub(1)
    }

    /// Block index applied to each group (absent groups inherit from the
    /// nearest present group on their left, or the first block).
    pub fn group_blocks(&self, blocks: &[Block]) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.xs.len());
        let mut b = 0;
        for g in 0..self.xs.len() {
            while b + 1 < blocks.len() && blocks[b + 1].start <= g {
                b += 1;
            }
            out.push(b);
        }
        out
    }

    pub fn step_function(&self, blocks: &[Block]) -> StepFunction {
        self.step_function_with(blocks, blocks.iter().map(Block::mean).collect())
    }

    /// Step function on the block partition with caller-supplied levels.
    pub fn step_function_with(&self, blocks: &[Block], levels: Vec<f64>) -> StepFunction {
        StepFunction {
            breakpoints: blocks[1..].iter().map(|b| self.xs[b.start]).collect(),
            levels,
            weights: blocks.iter().map(|b| b.sum_w).collect(),
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.xs
    }

    /// Group sums of `w * y` and `w`.
    pub fn group_sums(&self, y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut swy = vec![0.0; self.xs.len()];
        let mut sw = vec![0.0; self.xs.len()];
        for ((&g, &yi), &wi) in self.group_of.iter().zip(y).zip(w) {
            swy[g] += wi * yi;
            sw[g] += wi;
        }
        (swy, sw)
    }
}

/// L2 isotonic (non-decreasing) regression of `y` on `x` with weights `w`.
///
/// Ties in `x` are pooled first; after pool-adjacent-violators, adjacent
/// levels are merged until each carries at least `min_pool_weight`.
pub fn pava_isotonic(x: &[f64], y: &[f64], w: &[f64], min_pool_weight: f64) -> Result<StepFunction> {
    if x.is_empty() || x.len() != y.len() || x.len() != w.len() {
        return Err(Error::invalid("pava needs equal-length, nonempty x, y, w"));
    }
    if w.iter().any(|&v| !(v >= 0.0)) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("pava needs finite y and nonnegative weights"));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("pava needs positive total weight"));
    }
    let design = IsotonicDesign::new(x)?;
    let (swy, sw) = design.group_sums(y, w);
    let blocks = pava_blocks(&swy, &sw, min_pool_weight);
    Ok(design.step_function(&blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sse(f: &StepFunction, x: &[f64], y: &[f64], w: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(w)
            .map(|((xi, yi), wi)| wi * (yi - f.evaluate(*xi)).powi(2))
            .sum()
    }

    #[test]
    fn monotone_data_is_interpolated() {
        let x = [0.5, 1.0, 2.0, 4.0];
        let y = [-1.0, 0.0, 0.5, 3.0];
        let f = pava_isotonic(&x, &y, &[1.0; 4], 0.0).unwrap();
        assert_eq!(sse(&f, &x, &y, &[1.0; 4]), 0.0);
        assert_eq!(f.breakpoints(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn three_point_violation_pools_to_mean() {
        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 1.0, 2.0];
        let f = pava_isotonic(&x, &y, &[1.0; 3], 0.0).unwrap();
        assert_eq!(f.levels(), &[2.0]);
        assert!((sse(&f, &x, &y, &[1.0; 3]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_target_regardless_of_weights() {
        let f = pava_isotonic(&[3.0, 1.0, 2.0], &[4.2; 3], &[0.1, 5.0, 2.0], 0.0).unwrap();
        for x in [-10.0, 1.5, 2.0, 99.0] {
            assert_eq!(f.evaluate(x), 4.2);
        }
    }

    #[test]
    fn single_point_is_constant() {
        let f = pava_isotonic(&[0.3], &[7.0], &[1.0], 20.0).unwrap();
        assert_eq!(f.n_levels(), 1);
        assert_eq!(f.evaluate(-1.0), 7.0);
    }

    #[test]
    fn ties_are_pooled_before_fitting() {
        let f = pava_isotonic(&[1.0, 1.0, 2.0], &[0.0, 2.0, 3.0], &[1.0; 3], 0.0).unwrap();
        assert_eq!(f.levels(), &[1.0, 3.0]);
    }

    #[test]
    fn right_continuous_and_clamped() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![0.0, 5.0, 9.0]).unwrap();
        assert_eq!(f.evaluate(0.999), 0.0);
        assert_eq!(f.evaluate(1.0), 5.0);
        assert_eq!(f.evaluate(2.0), 9.0);
        assert_eq!(f.evaluate(1e9), 9.0);
        assert!(StepFunction::new(vec![1.0], vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn min_pool_weight_merges_light_levels() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y = x.clone();
        let f = pava_isotonic(&x, &y, &[1.0; 10], 3.0).unwrap();
        assert!(f.weights().iter().all(|&w| w >= 3.0));
        assert!(f.levels().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn json_shape() {
        let f = StepFunction::new(vec![1.0], vec![0.0, 2.0]).unwrap();
        let js = serde_json::to_value(&f).unwrap();
        assert_eq!(js, serde_json::json!({"breakpoints": [1.0], "levels": [0.0, 2.0]}));
    }

    proptest! {
        #[test]
        fn level_residuals_are_orthogonal(
            pts in prop::collection::vec((0u8..15, -5.0f64..5.0, 0.1f64..3.0), 1..60),
            min_pool in 0.0f64..8.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let w: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let f = pava_isotonic(&x, &y, &w, min_pool).unwrap();
            let mut resid = vec![0.0; f.n_levels()];
            for i in 0..x.len() {
                let l = f.level_index(x[i]);
                resid[l] += w[i] * (y[i] - f.levels()[l]);
            }
            for r in resid {
                prop_assert!(r.abs() < 1e-12 * (1.0 + w.iter().sum::<f64>() * 5.0));
            }
            prop_assert!(f.levels().windows(2).all(|p| p[0] <= p[1]));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn beats_random_monotone_candidates(
            pts in prop::collection::vec((-3.0f64..3.0, -5.0f64..5.0, 0.1f64..3.0), 2..25),
            cands in prop::collection::vec(prop::collection::vec(-6.0f64..6.0, 25), 1000),
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let w: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let f = pava_isotonic(&x, &y, &w, 0.0).unwrap();
            let best = sse(&f, &x, &y, &w);
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
            for c in &cands {
                let mut levels = c[..x.len()].to_vec();
                levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
                // assign sorted levels along the x order, equal x share a level
                let mut fitted = vec![0.0; x.len()];
                let mut k = 0;
                for (j, &i) in order.iter().enumerate() {
                    if j > 0 && x[i] != x[order[j - 1]] {
                        k += 1;
                    }
                    fitted[i] = levels[k];
                }
                let obj: f64 = (0..x.len()).map(|i| w[i] * (y[i] - fitted[i]).powi(2)).sum();
                prop_assert!(best <= obj + 1e-9);
            }
        }
    }
}
