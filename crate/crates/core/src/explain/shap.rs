use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{weighted_ridge, Attribution, Classifier, MethodKind, Output};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Value of every coalition: features in the mask from `x`, the rest from `baseline`.
fn coalition_values(
    model: &dyn Classifier,
    x: &[f64],
    baseline: &[f64],
    masks: &[Vec<bool>],
    class: usize,
    output: Output,
) -> Result<Vec<f64>> {
    let n = x.len();
    let mut data = Vec::with_capacity(masks.len() * n);
    for m in masks {
        data.extend((0..n).map(|j| if m[j] { x[j] } else { baseline[j] }));
    }
    output.eval(model, &Tensor::new(vec![masks.len(), n], data)?, class)
}

fn check(x: &[f64], baseline: &[f64]) -> Result<()> {
    if x.len() != baseline.len() || x.is_empty() {
        return Err(Error::InvalidArgument("Shapley values need a non-empty input and a matching baseline".into()));
    }
    Ok(())
}

/// Every combination of `k` indices out of `n`, in lexicographic order.
fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else { return };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Coalitions and their kernel weights, spending `budget` evaluations:
/// whole subset-size layers (paired with their complements) are enumerated
/// while the budget covers their kernel mass, the rest is sampled.
fn coalitions(n: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<bool>, f64)> {
    let sizes = (n - 1).div_ceil(2);
    let paired = (n - 1) / 2;
    let mut kernel: Vec<f64> = (1..=sizes).map(|s| (n - 1) as f64 / (s * (n - s)) as f64).collect();
    for w in kernel.iter_mut().take(paired) {
        *w *= 2.0;
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let mut out: Vec<(Vec<bool>, f64)> = Vec::new();
    let mut left = budget as f64;
    let mut remaining = kernel.clone();
    let mut full = 0;
    for s in 1..=sizes {
        let is_paired = s <= paired;
        let count = binomial(n, s) * if is_paired { 2.0 } else { 1.0 };
        if left * remaining[s - 1] / count < 1.0 - 1e-8 {
            break;
        }
        full += 1;
        left -= count;
        if remaining[s - 1] < 1.0 {
            let scale = 1.0 - remaining[s - 1];
            remaining.iter_mut().for_each(|w| *w /= scale);
        }
        let w = kernel[s - 1] / binomial(n, s) / if is_paired { 2.0 } else { 1.0 };
        combinations(n, s, |idx| {
            let mut m = vec![false; n];
            idx.iter().for_each(|&i| m[i] = true);
            if is_paired {
                out.push((m.iter().map(|b| !b).collect(), w));
            }
            out.push((m, w));
        });
    }
    if full == sizes {
        return out;
    }

    let mut left = budget.saturating_sub(out.len());
    let mut probs: Vec<f64> = kernel.clone();
    for w in probs.iter_mut().take(paired) {
        *w /= 2.0;
    }
    let probs = &probs[full..];
    let Ok(size_dist) = WeightedIndex::new(probs) else { return out };
    let fixed = out.len();
    let mut seen: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut add = |m: Vec<bool>, out: &mut Vec<(Vec<bool>, f64)>, left: &mut usize| {
        if let Some(&i) = seen.get(&m) {
            out[i].1 += 1.0;
        } else {
            seen.insert(m.clone(), out.len());
            out.push((m, 1.0));
            *left -= 1;
        }
    };
    let mut draws = 0;
    while left > 0 && draws < 4 * budget.max(1) {
        draws += 1;
        let s = size_dist.sample(rng) + full + 1;
        let mut m = vec![false; n];
        for i in rand::seq::index::sample(rng, n, s) {
            m[i] = true;
        }
        let complement: Vec<bool> = m.iter().map(|b| !b).collect();
        add(m, &mut out, &mut left);
        if left > 0 && s <= paired {
            add(complement, &mut out, &mut left);
        }
    }
    let mass: f64 = kernel[full..].iter().sum();
    let sampled: f64 = out[fixed..].iter().map(|c| c.1).sum();
    for c in &mut out[fixed..] {
        c.1 *= mass / sampled;
    }
    out
}

/// Kernel SHAP: Shapley-kernel weighted least squares over `samples`
/// coalitions (features outside a coalition take the baseline value), with
/// efficiency `sum phi = v(N) - v(empty)` imposed exactly.
pub fn kernel_shap(
    model: &dyn Classifier,
    x: &[f64],
    baseline: &[f64],
    samples: usize,
    class: usize,
    output: Output,
    seed: u64,
) -> Result<Attribution> {
    check(x, baseline)?;
    let n = x.len();
    let ends = coalition_values(model, x, baseline, &[vec![false; n], vec![true; n]], class, output)?;
    let (v0, delta) = (ends[0], ends[1] - ends[0]);
    if n == 1 {
        return Attribution::new(vec![delta], class, MethodKind::KernelShap);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coal = coalitions(n, samples, &mut rng);
    let masks: Vec<Vec<bool>> = coal.iter().map(|c| c.0.clone()).collect();
    let values = coalition_values(model, x, baseline, &masks, class, output)?;
    // Substitute phi_{n-1} = delta - sum_{j < n-1} phi_j.
    let last = n - 1;
    let z: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| {
            let zl = f64::from(u8::from(m[last]));
            (0..last).map(|j| f64::from(u8::from(m[j])) - zl).collect()
        })
        .collect();
    let y: Vec<f64> = masks.iter().zip(&values).map(|(m, v)| v - v0 - f64::from(u8::from(m[last])) * delta).collect();
    let w: Vec<f64> = coal.iter().map(|c| c.1).collect();
    let mut phi = weighted_ridge(&z, &y, &w, 0.0, &vec![true; last])?;
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(Attribution::new(phi, class, MethodKind::KernelShap)?
        .with("samples", samples as f64)
        .with("coalitions", masks.len() as f64))
}

/// Exact Shapley values by enumerating all `2^n` coalitions (`n <= 12`).
pub fn exact_shapley(model: &dyn Classifier, x: &[f64], baseline: &[f64], class: usize, output: Output) -> Result<Attribution> {
    check(x, baseline)?;
    let n = x.len();
    if n > 12 {
        return Err(Error::InvalidArgument(format!("exact Shapley enumeration is limited to 12 features, got {n}")));
    }
    let masks: Vec<Vec<bool>> = (0..1usize << n).map(|s| (0..n).map(|j| s >> j & 1 == 1).collect()).collect();
    let v = coalition_values(model, x, baseline, &masks, class, output)?;
    let fact = |k: usize| (1..=k).fold(1.0, |a, i| a * i as f64);
    let weight: Vec<f64> = (0..n).map(|s| fact(s) * fact(n - s - 1) / fact(n)).collect();
    let mut phi = vec![0.0; n];
    for s in 0..1usize << n {
        let size = s.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if s >> i & 1 == 0 {
                *p += weight[size] * (v[s | 1 << i] - v[s]);
            }
        }
    }
    Attribution::new(phi, class, MethodKind::ExactShapley)
}
