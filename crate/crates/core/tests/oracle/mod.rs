//! Reference implementations used to check the library. They share no code
//! with it and favour obviousness over speed.

#![allow(dead_code)]

/// Lowercase, then split on anything that is not a letter or digit.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// BM25 of `docs[target]` recomputed from the raw descriptions.
pub fn bm25(docs: &[String], query: &[String], target: usize, k1: f64, b: f64) -> f64 {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokens(d)).collect();
    let n = docs.len() as f64;
    let avgdl = tokenized.iter().map(|t| t.len()).sum::<usize>() as f64 / n;
    let dl = tokenized[target].len() as f64;
    let mut score = 0.0;
    for term in query {
        let tf = tokenized[target].iter().filter(|t| *t == term).count() as f64;
        if tf == 0.0 {
            continue;
        }
        let df = tokenized.iter().filter(|doc| doc.contains(term)).count() as f64;
        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
    }
    score
}

fn all_ngrams(items: &[String], n: usize) -> Vec<String> {
    if items.len() < n {
        return Vec::new();
    }
    (0..=items.len() - n).map(|i| items[i..i + n].join("\u{1}")).collect()
}

/// Clipped matches between two n-gram lists by repeated removal.
fn clipped_matches(hyp: &[String], reference: &[String]) -> usize {
    let mut pool: Vec<&String> = reference.iter().collect();
    let mut matches = 0;
    for g in hyp {
        if let Some(pos) = pool.iter().position(|r| *r == g) {
            pool.remove(pos);
            matches += 1;
        }
    }
    matches
}

/// Corpus ChrF++ with char orders 1..=6, word orders 1..=2, beta = 2.
pub fn chrf_pp(preds: &[String], refs: &[String]) -> f64 {
    let mut matches = [0usize; 8];
    let mut hyp_tot = [0usize; 8];
    let mut ref_tot = [0usize; 8];
    for (p, r) in preds.iter().zip(refs) {
        let pc: Vec<String> = p.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
        let rc: Vec<String> = r.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
        let pw: Vec<String> = p.split_whitespace().map(String::from).collect();
        let rw: Vec<String> = r.split_whitespace().map(String::from).collect();
        for order in 0..8 {
            let (h, g) = if order < 6 {
                (all_ngrams(&pc, order + 1), all_ngrams(&rc, order + 1))
            } else {
                (all_ngrams(&pw, order - 5), all_ngrams(&rw, order - 5))
            };
            matches[order] += clipped_matches(&h, &g);
            hyp_tot[order] += h.len();
            ref_tot[order] += g.len();
        }
    }
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut used = 0.0;
    for order in 0..8 {
        if hyp_tot[order] == 0 && ref_tot[order] == 0 {
            continue;
        }
        used += 1.0;
        if hyp_tot[order] > 0 {
            p_sum += matches[order] as f64 / hyp_tot[order] as f64;
        }
        if ref_tot[order] > 0 {
            r_sum += matches[order] as f64 / ref_tot[order] as f64;
        }
    }
    if used == 0.0 {
        return 100.0;
    }
    let (p, r) = (p_sum / used, r_sum / used);
    if 4.0 * p + r == 0.0 {
        0.0
    } else {
        100.0 * 5.0 * p * r / (4.0 * p + r)
    }
}

/// Tau-b by explicit classification of every pair.
pub fn tau_b(a: &[f64], b: &[f64]) -> f64 {
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0.0, 0.0, 0.0, 0.0);
    let n = a.len();
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 && db == 0.0 {
                tie_a += 1.0;
                tie_b += 1.0;
            } else if da == 0.0 {
                tie_a += 1.0;
            } else if db == 0.0 {
                tie_b += 1.0;
            } else if (da > 0.0) == (db > 0.0) {
                conc += 1.0;
            } else {
                disc += 1.0;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    (conc - disc) / ((n0 - tie_a) * (n0 - tie_b)).sqrt()
}

fn permutations(items: &[f64]) -> Vec<Vec<f64>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Two-sided exact p-value of tau-b by enumerating all orderings of `b`.
pub fn exact_p(a: &[f64], b: &[f64]) -> f64 {
    let observed = tau_b(a, b).abs();
    let perms = permutations(b);
    let extreme = perms.iter().filter(|p| tau_b(a, p).abs() >= observed - 1e-12).count();
    extreme as f64 / perms.len() as f64
}

/// Greedy-match BERTScore over one-hot token embeddings, computed with set
/// membership rather than vectors.
pub fn one_hot_bertscore(pred: &str, reference: &str) -> (f64, f64, f64) {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if p.is_empty() || r.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let prec = p.iter().filter(|t| r.contains(t)).count() as f64 / p.len() as f64;
    let rec = r.iter().filter(|t| p.contains(t)).count() as f64 / r.len() as f64;
    let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
    (prec, rec, f1)
}
