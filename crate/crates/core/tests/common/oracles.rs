//! Reference procedures written independently of the library code.

use std::collections::BTreeSet;

/// Rosenblatt perceptron; returns true if it separates the points within
/// `epochs` passes, which certifies linear separability.
pub fn perceptron_separates(points: &[Vec<f64>], labels: &[bool], epochs: usize) -> bool {
    let d = points[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..epochs {
        let mut mistakes = 0;
        for (x, &y) in points.iter().zip(labels) {
            let s: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let target = if y { 1.0 } else { -1.0 };
            if s * target <= 0.0 {
                mistakes += 1;
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += target * xi;
                }
                w[d] += target;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

/// Lowercase alphanumeric runs, written without reference to the library
/// tokenizer.
pub fn words(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

/// For each class, the first word (lexicographically) present in every
/// training document of that class and absent from all others.
pub fn decision_list(docs: &[(BTreeSet<String>, usize)], classes: usize) -> Option<Vec<String>> {
    (0..classes)
        .map(|k| {
            let mut mine = docs.iter().filter(|(_, y)| *y == k).map(|(w, _)| w);
            let first = mine.next()?.clone();
            let common: BTreeSet<String> =
                mine.fold(first, |acc, w| acc.intersection(w).cloned().collect());
            common
                .into_iter()
                .find(|word| docs.iter().all(|(w, y)| *y == k || !w.contains(word)))
        })
        .collect()
}

pub fn apply_decision_list(rules: &[String], doc: &BTreeSet<String>) -> Option<usize> {
    rules.iter().position(|r| doc.contains(r))
}

/// Nearest class-mean template under squared distance.
pub struct TemplateMatcher {
    templates: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl TemplateMatcher {
    pub fn fit(images: &[Vec<f64>], labels: &[usize], classes: usize) -> Self {
        let d = images[0].len();
        let mut sums = vec![vec![0.0; d]; classes];
        let mut counts = vec![0usize; classes];
        for (x, &y) in images.iter().zip(labels) {
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            for v in s.iter_mut() {
                *v /= n.max(1) as f64;
            }
        }
        TemplateMatcher {
            templates: sums,
            labels: (0..classes).collect(),
        }
    }

    pub fn classify_label(&self, x: &[f64]) -> usize {
        let dist = |t: &Vec<f64>| t.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut best = 0;
        for k in 1..self.templates.len() {
            if dist(&self.templates[k]) < dist(&self.templates[best]) {
                best = k;
            }
        }
        self.labels[best]
    }
}

/// Second-order split gain, computed directly from the definition.
pub fn split_gain(grads: &[f64], hess: &[f64], left: &[bool]) -> Option<f64> {
    let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
    for ((g, h), &l) in grads.iter().zip(hess).zip(left) {
        if l {
            gl += g;
            hl += h;
        } else {
            gr += g;
            hr += h;
        }
    }
    if hl <= 0.0 || hr <= 0.0 {
        return None;
    }
    let (g, h) = (gl + gr, hl + hr);
    Some(0.5 * (gl * gl / hl + gr * gr / hr - g * g / h))
}

/// Every candidate threshold of every feature: midpoints between adjacent
/// distinct values.
pub fn candidate_splits(rows: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let d = rows[0].len();
    let mut out = Vec::new();
    for f in 0..d {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            out.push((f, (w[0] + w[1]) / 2.0));
        }
    }
    out
}

/// Best single split by exhaustive enumeration; ties resolved by lowest
/// feature then lowest threshold (enumeration order).
pub fn best_split(rows: &[Vec<f64>], grads: &[f64], hess: &[f64]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (f, t) in candidate_splits(rows) {
        let left: Vec<bool> = rows.iter().map(|r| r[f] < t).collect();
        if let Some(g) = split_gain(grads, hess, &left) {
            if g > 0.0 && best.is_none_or(|(_, _, bg)| g > bg) {
                best = Some((f, t, g));
            }
        }
    }
    best
}

/// Whether some tree of depth at most 2 with majority leaves classifies
/// the binary targets without error.
pub fn depth2_tree_separates(rows: &[Vec<f64>], targets: &[bool]) -> bool {
    let pure = |idx: &[usize]| idx.iter().all(|&i| targets[i]) || idx.iter().all(|&i| !targets[i]);
    let all: Vec<usize> = (0..rows.len()).collect();
    if pure(&all) {
        return true;
    }
    let splits = candidate_splits(rows);
    let side_ok = |idx: &[usize]| {
        pure(idx)
            || splits.iter().any(|&(f, t)| {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][f] < t);
                pure(&l) && pure(&r)
            })
    };
    splits.iter().any(|&(f, t)| {
        let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| rows[i][f] < t);
        !l.is_empty() && !r.is_empty() && side_ok(&l) && side_ok(&r)
    })
}

/// Histogram of ink-pixel distances from the ink centroid, scaled by the
/// square root of the ink area. Invariant to shifts and scale of the glyph.
/// `plane` is one preprocessed channel; ink is any value below zero.
pub fn radial_profile(plane: &[f64], side: usize, bins: usize) -> Vec<f64> {
    let ink: Vec<(f64, f64)> = (0..plane.len())
        .filter(|&i| plane[i] < 0.0)
        .map(|i| ((i % side) as f64, (i / side) as f64))
        .collect();
    let mut hist = vec![0.0; bins];
    if ink.is_empty() {
        return hist;
    }
    let n = ink.len() as f64;
    let cx = ink.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = ink.iter().map(|p| p.1).sum::<f64>() / n;
    let scale = n.sqrt();
    for (x, y) in &ink {
        let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() / scale;
        let b = ((r / 1.5) * bins as f64) as usize;
        hist[b.min(bins - 1)] += 1.0 / n;
    }
    hist
}
