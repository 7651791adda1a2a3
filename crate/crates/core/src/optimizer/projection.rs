use crate::error::{Error, Result};
use crate::policy::TokenDistribution;

/// Euclidean projection onto the probability simplex (sort and threshold).
///
/// The result is renormalized once more so float drift in the sum stays
/// below 1e-12.
pub fn project_simplex(v: &[f64]) -> Result<TokenDistribution> {
    if v.is_empty() {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("projection input must be finite"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|x| *x /= total);
    } else {
        // Only reachable through catastrophic cancellation; fall back to the argmax vertex.
        let top = crate::util::argmax(v);
        out.iter_mut().enumerate().for_each(|(i, x)| *x = (i == top) as u8 as f64);
    }
    Ok(TokenDistribution::from_projection(out))
}
