use super::{Attribution, Classifier, MethodKind, Output};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Drop in `p(c | x)` when each contiguous group of `group` features is
/// replaced by the baseline; every feature in a group gets the group's score.
pub fn occlusion(model: &dyn Classifier, x: &[f64], baseline: &[f64], group: usize, class: usize) -> Result<Attribution> {
    if baseline.len() != x.len() || group == 0 {
        return Err(Error::InvalidArgument("occlusion needs a full baseline and a positive group size".into()));
    }
    let n = x.len();
    let groups: Vec<(usize, usize)> = (0..n).step_by(group).map(|s| (s, (s + group).min(n))).collect();
    let mut batch = Vec::with_capacity((groups.len() + 1) * n);
    batch.extend_from_slice(x);
    for &(s, e) in &groups {
        let mut r = x.to_vec();
        r[s..e].copy_from_slice(&baseline[s..e]);
        batch.extend(r);
    }
    let p = Output::Probability.eval(model, &Tensor::new(vec![groups.len() + 1, n], batch)?, class)?;
    let mut scores = vec![0.0; n];
    for (g, &(s, e)) in groups.iter().enumerate() {
        scores[s..e].iter_mut().for_each(|v| *v = p[0] - p[g + 1]);
    }
    Ok(Attribution::new(scores, class, MethodKind::Occlusion)?.with("group", group as f64))
}
