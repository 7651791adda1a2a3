//! Brute-force reference implementations shared by the integration tests
//! and the acceptance harness. None of these call into the library code
//! they are used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

/// Euclidean projection onto the simplex by enumerating every candidate
/// support set and solving the equality-constrained problem on it.
pub fn qp_projection(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let tau = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut x = vec![0.0; n];
        let mut feasible = true;
        for &i in &support {
            x[i] = v[i] - tau;
            if x[i] < -1e-15 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        x.iter_mut().for_each(|xi| *xi = xi.max(0.0));
        let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    best.expect("some support is always feasible").1
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Neighbors by sorting every other point on (distance, id).
pub fn knn(ids: &[u64], vectors: &[Vec<f64>], query: u64, k: usize) -> Vec<u64> {
    let q = ids.iter().position(|&i| i == query).expect("query present");
    let mut scored: Vec<(f64, u64)> = ids
        .iter()
        .zip(vectors)
        .filter(|(&id, _)| id != query)
        .map(|(&id, v)| (dist(v, &vectors[q]), id))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

pub fn words(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in sentence.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Corpus counts gathered by a direct scan.
pub struct Counts {
    pub uni: HashMap<String, f64>,
    pub bi: HashMap<(String, String), f64>,
    pub n_uni: f64,
    pub n_bi: f64,
}

pub fn counts(corpus: &[String]) -> Counts {
    let mut c = Counts {
        uni: HashMap::new(),
        bi: HashMap::new(),
        n_uni: 0.0,
        n_bi: 0.0,
    };
    for s in corpus {
        let w = words(s);
        for i in 0..w.len() {
            *c.uni.entry(w[i].clone()).or_default() += 1.0;
            c.n_uni += 1.0;
            if i + 1 < w.len() {
                *c.bi.entry((w[i].clone(), w[i + 1].clone())).or_default() += 1.0;
                c.n_bi += 1.0;
            }
        }
    }
    c
}

pub fn pmi(c: &Counts, a: &str, b: &str) -> f64 {
    let joint = c.bi.get(&(a.to_string(), b.to_string())).copied().unwrap_or(0.0);
    let (Some(pa), Some(pb)) = (c.uni.get(a), c.uni.get(b)) else {
        return f64::NEG_INFINITY;
    };
    if joint == 0.0 {
        return f64::NEG_INFINITY;
    }
    ((joint / c.n_bi) / ((pa / c.n_uni) * (pb / c.n_uni))).ln()
}

/// The one segmentation, among all 2^(L-1), whose internal adjacencies all
/// reach the threshold and whose cuts all fall below it.
pub fn segmentation(c: &Counts, w: &[String], threshold: f64) -> Vec<String> {
    if w.is_empty() {
        return Vec::new();
    }
    let gaps = w.len() - 1;
    let mut found = Vec::new();
    for mask in 0u64..(1u64 << gaps) {
        let consistent = (0..gaps).all(|g| {
            let cut = mask & (1 << g) != 0;
            let joins = pmi(c, &w[g], &w[g + 1]) >= threshold;
            cut != joins
        });
        if !consistent {
            continue;
        }
        let mut segs = vec![w[0].clone()];
        for g in 0..gaps {
            if mask & (1 << g) != 0 {
                segs.push(w[g + 1].clone());
            } else {
                let last = segs.last_mut().unwrap();
                last.push(' ');
                last.push_str(&w[g + 1]);
            }
        }
        found.push(segs);
    }
    assert_eq!(found.len(), 1, "exactly one segmentation is consistent");
    found.pop().unwrap()
}

pub fn vocabulary(corpus: &[String], delta: u64, threshold: f64, n_max: usize) -> Vec<String> {
    let c = counts(corpus);
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for s in corpus {
        for g in segmentation(&c, &words(s), threshold) {
            *freq.entry(g).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, u64)> = freq.into_iter().filter(|(_, n)| *n >= delta).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    kept.into_iter().take(n_max).map(|(g, _)| g).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Central finite-difference gradient of the entropy, one coordinate at a
/// time.
pub fn entropy_fd(p: &[f64], delta: f64) -> Vec<f64> {
    (0..p.len())
        .map(|j| {
            let mut up = p.to_vec();
            let mut down = p.to_vec();
            up[j] += delta;
            down[j] -= delta;
            (entropy(&up) - entropy(&down)) / (2.0 * delta)
        })
        .collect()
}

/// Score-function component formulas for one position.
pub fn score_component(p: &[f64], sampled: usize, j: usize, textbook: bool) -> f64 {
    let inv = 1.0 / p[sampled];
    if j == sampled {
        inv
    } else if textbook {
        0.0
    } else {
        -inv
    }
}

/// Exact expectation of the variance-reduced estimator for a one-position
/// policy: sums the estimator over all N^I sample tuples weighted by their
/// probability.
pub fn vr_pge_expectation(p: &[f64], samples: usize, loss: &dyn Fn(usize) -> f64, textbook: bool) -> Vec<f64> {
    let n = p.len();
    let mut expect = vec![0.0; n];
    let total = n.pow(samples as u32);
    for code in 0..total {
        let mut tuple = Vec::with_capacity(samples);
        let mut c = code;
        for _ in 0..samples {
            tuple.push(c % n);
            c /= n;
        }
        let prob: f64 = tuple.iter().map(|&z| p[z]).product();
        let losses: Vec<f64> = tuple.iter().map(|&z| loss(z)).collect();
        let mean = losses.iter().sum::<f64>() / samples as f64;
        for (j, e) in expect.iter_mut().enumerate() {
            let g: f64 = tuple
                .iter()
                .zip(&losses)
                .map(|(&z, &l)| (l - mean) * score_component(p, z, j, textbook))
                .sum::<f64>()
                / (samples - 1) as f64;
            *e += prob * g;
        }
    }
    expect
}

/// Gradient of `E[L]` with respect to the unconstrained `p`:
/// `dE/dp_j = L(j)` for a single position.
pub fn true_gradient(p: &[f64], loss: &dyn Fn(usize) -> f64) -> Vec<f64> {
    (0..p.len()).map(loss).collect()
}
