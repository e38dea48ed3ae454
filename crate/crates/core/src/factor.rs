//! Dense tables over small sets of discrete variables.
//!
//! A [`Factor`] stores one value per joint assignment of its variables in
//! row-major order: variables are kept sorted by index and the last one
//! varies fastest. Marginals, clique potentials and beliefs all share this
//! layout so they can be combined without reindexing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    /// `vars` must be strictly increasing and `values.len()` the product of `cards`.
    pub fn new(vars: Vec<usize>, cards: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert!(vars.windows(2).all(|w| w[0] < w[1]), "unsorted vars {vars:?}");
        debug_assert_eq!(vars.len(), cards.len());
        debug_assert_eq!(values.len(), cards.iter().product::<usize>());
        Self { vars, cards, values }
    }

    pub fn constant(vars: Vec<usize>, cards: Vec<usize>, value: f64) -> Self {
        let size = cards.iter().product();
        Self::new(vars, cards, vec![value; size])
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(Vec::new(), Vec::new(), vec![value])
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn card_of(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var).map(|i| self.cards[i])
    }

    pub fn contains_all(&self, vars: &[usize]) -> bool {
        vars.iter().all(|v| self.vars.binary_search(v).is_ok())
    }

    /// Sum out every variable not in `keep`.
    pub fn sum_onto(&self, keep: &[usize]) -> Factor {
        let (vars, cards) = self.sub_domain(keep);
        let mut out = vec![0.0; cards.iter().product()];
        let strides = strides_in(&self.vars, &vars, &cards);
        for_each_projected(&self.cards, &strides, |b, s| out[s] += self.values[b]);
        Factor::new(vars, cards, out)
    }

    /// Log-sum-exp out every variable not in `keep` (values are logs).
    pub fn logsumexp_onto(&self, keep: &[usize]) -> Factor {
        let (vars, cards) = self.sub_domain(keep);
        let size: usize = cards.iter().product();
        let strides = strides_in(&self.vars, &vars, &cards);
        let mut max = vec![f64::NEG_INFINITY; size];
        for_each_projected(&self.cards, &strides, |b, s| {
            if self.values[b] > max[s] {
                max[s] = self.values[b];
            }
        });
        let mut acc = vec![0.0; size];
        for_each_projected(&self.cards, &strides, |b, s| {
            if max[s] > f64::NEG_INFINITY {
                acc[s] += (self.values[b] - max[s]).exp();
            }
        });
        let out = acc.iter().zip(&max).map(|(&a, &m)| if m == f64::NEG_INFINITY { m } else { m + a.ln() }).collect();
        Factor::new(vars, cards, out)
    }

    /// Broadcast onto a superset domain.
    pub fn expand(&self, vars: &[usize], cards: &[usize]) -> Factor {
        debug_assert!(self.vars.iter().all(|v| vars.contains(v)));
        let strides = strides_in(vars, &self.vars, &self.cards);
        let mut out = vec![0.0; cards.iter().product()];
        for_each_projected(cards, &strides, |b, s| out[b] = self.values[s]);
        Factor::new(vars.to_vec(), cards.to_vec(), out)
    }

    /// `self[x] += other[x restricted]`; `other`'s vars must be a subset of ours.
    pub fn add_assign_broadcast(&mut self, other: &Factor, scale: f64) {
        let strides = strides_in(&self.vars, &other.vars, &other.cards);
        let values = &mut self.values;
        for_each_projected(&self.cards, &strides, |b, s| values[b] += scale * other.values[s]);
    }

    /// `self[x] *= other[x restricted]`; `other`'s vars must be a subset of ours.
    pub fn mul_assign_broadcast(&mut self, other: &Factor) {
        let strides = strides_in(&self.vars, &other.vars, &other.cards);
        let values = &mut self.values;
        for_each_projected(&self.cards, &strides, |b, s| values[b] *= other.values[s]);
    }

    /// Binary combination over the union of both domains.
    pub fn combine(&self, other: &Factor, op: impl Fn(f64, f64) -> f64) -> Factor {
        let (vars, cards) = union_domain(&self.vars, &self.cards, &other.vars, &other.cards);
        let sa = strides_in(&vars, &self.vars, &self.cards);
        let sb = strides_in(&vars, &other.vars, &other.cards);
        let size: usize = cards.iter().product();
        let mut out = Vec::with_capacity(size);
        let mut ia = 0usize;
        let mut ib = 0usize;
        let mut counter = vec![0usize; cards.len()];
        for _ in 0..size {
            out.push(op(self.values[ia], other.values[ib]));
            for k in (0..cards.len()).rev() {
                counter[k] += 1;
                ia += sa[k];
                ib += sb[k];
                if counter[k] < cards[k] {
                    break;
                }
                ia -= sa[k] * cards[k];
                ib -= sb[k] * cards[k];
                counter[k] = 0;
            }
        }
        Factor::new(vars, cards, out)
    }

    pub fn product(&self, other: &Factor) -> Factor {
        self.combine(other, |a, b| a * b)
    }

    pub fn log_product(&self, other: &Factor) -> Factor {
        self.combine(other, |a, b| a + b)
    }

    /// Fix `var = value`, dropping it from the domain.
    pub fn slice(&self, var: usize, value: usize) -> Factor {
        let pos = match self.vars.iter().position(|&v| v == var) {
            Some(p) => p,
            None => return self.clone(),
        };
        let inner: usize = self.cards[pos + 1..].iter().product();
        let outer: usize = self.cards[..pos].iter().product();
        let card = self.cards[pos];
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * card + value) * inner;
            out.extend_from_slice(&self.values[base..base + inner]);
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        Factor::new(vars, cards, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Factor {
        Factor::new(self.vars.clone(), self.cards.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Log-sum-exp of all entries.
    pub fn logsumexp(&self) -> f64 {
        logsumexp(&self.values)
    }

    /// Flat index of a full assignment given in variable order.
    pub fn flat_index(&self, assignment: &[usize]) -> usize {
        assignment.iter().zip(&self.cards).fold(0, |acc, (&a, &c)| acc * c + a)
    }

    fn sub_domain(&self, keep: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let mut vars = Vec::new();
        let mut cards = Vec::new();
        for (&v, &c) in self.vars.iter().zip(&self.cards) {
            if keep.contains(&v) {
                vars.push(v);
                cards.push(c);
            }
        }
        (vars, cards)
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-major strides of `sub_vars` expressed per variable of `big_vars`
/// (zero for variables absent from the sub-domain).
pub fn strides_in(big_vars: &[usize], sub_vars: &[usize], sub_cards: &[usize]) -> Vec<usize> {
    let mut sub_strides = vec![0usize; sub_vars.len()];
    let mut acc = 1;
    for i in (0..sub_vars.len()).rev() {
        sub_strides[i] = acc;
        acc *= sub_cards[i];
    }
    big_vars
        .iter()
        .map(|v| match sub_vars.iter().position(|s| s == v) {
            Some(i) => sub_strides[i],
            None => 0,
        })
        .collect()
}

/// Walks the big domain in row-major order, calling `f(big_index, sub_index)`.
pub fn for_each_projected(big_cards: &[usize], sub_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let size: usize = big_cards.iter().product();
    if size == 0 {
        return;
    }
    let k = big_cards.len();
    if k == 0 {
        f(0, 0);
        return;
    }
    let last_card = big_cards[k - 1];
    let last_stride = sub_strides[k - 1];
    let mut counter = vec![0usize; k];
    let mut sub = 0usize;
    let mut big = 0usize;
    while big < size {
        // innermost axis unrolled as a plain loop
        let mut s = sub;
        for _ in 0..last_card {
            f(big, s);
            big += 1;
            s += last_stride;
        }
        let mut axis = k - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            counter[axis] += 1;
            sub += sub_strides[axis];
            if counter[axis] < big_cards[axis] {
                break;
            }
            sub -= sub_strides[axis] * big_cards[axis];
            counter[axis] = 0;
        }
    }
}

/// Sorted union of two variable domains.
pub fn union_domain(va: &[usize], ca: &[usize], vb: &[usize], cb: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut pairs: Vec<(usize, usize)> = va.iter().copied().zip(ca.iter().copied()).collect();
    for (&v, &c) in vb.iter().zip(cb) {
        if !va.contains(&v) {
            pairs.push((v, c));
        }
    }
    pairs.sort_unstable();
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Factor {
        // vars 0,1,2 with cards 2,3,2; value = flat index
        Factor::new(vec![0, 1, 2], vec![2, 3, 2], (0..12).map(|v| v as f64).collect())
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn sum_onto_matches_manual_loops() {
        let f = abc();
        let m = f.sum_onto(&[1]);
        let mut expect = [0.0; 3];
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..2 {
                    expect[b] += (a * 6 + b * 2 + c) as f64;
                }
            }
        }
        assert_eq!(m.values(), &expect);
        let m02 = f.sum_onto(&[0, 2]);
        assert_eq!(m02.values(), &[6.0, 9.0, 24.0, 27.0]);
        assert_eq!(f.sum_onto(&[]).values(), &[66.0]);
    }

    #[test]
    fn expand_then_sum_scales_by_missing_card() {
        let g = Factor::new(vec![1], vec![3], vec![1.0, 2.0, 3.0]);
        let e = g.expand(&[0, 1, 2], &[2, 3, 2]);
        assert_eq!(e.values()[0..4], [1.0, 1.0, 2.0, 2.0]);
        let back = e.sum_onto(&[1]);
        assert_eq!(back.values(), &[4.0, 8.0, 12.0]);
    }

    #[test]
    fn combine_over_union() {
        let a = Factor::new(vec![0], vec![2], vec![1.0, 2.0]);
        let b = Factor::new(vec![1], vec![2], vec![10.0, 20.0]);
        let p = a.product(&b);
        assert_eq!(p.vars(), &[0, 1]);
        assert_eq!(p.values(), &[10.0, 20.0, 20.0, 40.0]);
        let q = b.product(&a);
        assert_eq!(p, q);
    }

    #[test]
    fn slice_fixes_value() {
        let f = abc();
        let s = f.slice(1, 2);
        assert_eq!(s.vars(), &[0, 2]);
        assert_eq!(s.values(), &[4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn logsumexp_onto_agrees_with_sum_in_linear_space() {
        let f = abc().map(|v| (v + 1.0).ln());
        let l = f.logsumexp_onto(&[0]).map(f64::exp);
        let s = abc().map(|v| v + 1.0).sum_onto(&[0]);
        for (x, y) in l.values().iter().zip(s.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
