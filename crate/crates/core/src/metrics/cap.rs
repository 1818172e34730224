//! Captioning metrics: BLEU-1..4, ROUGE-L and CIDEr-D over multiple
//! references, plus length-penalized variants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{length_ratio, MetricError};

pub const MAX_N: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;

/// Lowercase, drop ASCII punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut out = Counts::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// Sentence BLEU-1..`max_n` with clipped counts, closest-reference
/// brevity penalty and no smoothing. Returns one score per order.
pub fn bleu(candidate: &[String], refs: &[Vec<String>], max_n: usize) -> Result<Vec<f64>, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::EmptyReferences);
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(vec![0.0; max_n]);
    }
    let r = refs
        .iter()
        .map(|x| x.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };

    let mut precisions = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let hyp = ngrams(candidate, n);
        let mut max_ref = Counts::new();
        for rf in refs {
            for (g, k) in ngrams(rf, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let matched: usize = hyp.iter().map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let total: usize = hyp.values().sum::<usize>().max(1);
        precisions.push((matched, total));
    }

    let mut out = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let ps = &precisions[..n];
        if ps.iter().any(|(m, _)| *m == 0) {
            out.push(0.0);
            continue;
        }
        let w = 1.0 / n as f64;
        let log_sum: f64 = ps.iter().map(|(m, t)| w * (*m as f64 / *t as f64).ln()).sum();
        out.push(bp * log_sum.exp());
    }
    Ok(out)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with beta = 1.2, maximised over references.
pub fn rouge_l(candidate: &[String], refs: &[Vec<String>]) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::EmptyReferences);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok(refs
        .iter()
        .map(|rf| {
            let l = lcs(candidate, rf) as f64;
            if l == 0.0 || rf.is_empty() {
                return 0.0;
            }
            let p = l / candidate.len() as f64;
            let r = l / rf.len() as f64;
            (1.0 + b2) * p * r / (r + b2 * p)
        })
        .fold(0.0, f64::max))
}

/// Document frequencies of n-grams (n = 1..4) over the reference sets of
/// a corpus; each item's references count as one document.
#[derive(Debug, Clone)]
pub struct CorpusIdf {
    df: BTreeMap<Vec<String>, usize>,
    size: usize,
}

impl CorpusIdf {
    pub fn new(ref_sets: &[Vec<Vec<String>>]) -> Self {
        let mut df = BTreeMap::new();
        for refs in ref_sets {
            let mut seen: BTreeMap<&[String], ()> = BTreeMap::new();
            for rf in refs {
                for n in 1..=MAX_N {
                    for g in ngrams(rf, n).into_keys() {
                        seen.insert(g, ());
                    }
                }
            }
            for g in seen.into_keys() {
                *df.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        Self { df, size: ref_sets.len() }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn df(&self, gram: &[String]) -> usize {
        self.df.get(gram).copied().unwrap_or(0)
    }

    fn vector<'a>(&self, tokens: &'a [String]) -> ([BTreeMap<&'a [String], f64>; MAX_N], [f64; MAX_N], usize) {
        let ref_len = (self.size as f64).ln();
        let mut vec: [BTreeMap<&[String], f64>; MAX_N] = Default::default();
        let mut norm = [0.0; MAX_N];
        for n in 1..=MAX_N {
            for (g, tf) in ngrams(tokens, n) {
                let df = (self.df(g).max(1) as f64).ln();
                let v = tf as f64 * (ref_len - df);
                norm[n - 1] += v * v;
                vec[n - 1].insert(g, v);
            }
        }
        let length = tokens.len().saturating_sub(1);
        (vec, norm.map(f64::sqrt), length)
    }

    /// CIDEr-D of one candidate against its references, x10 scale.
    pub fn cider_d(&self, candidate: &[String], refs: &[Vec<String>]) -> Result<f64, MetricError> {
        if refs.is_empty() {
            return Err(MetricError::EmptyReferences);
        }
        let (vh, nh, lh) = self.vector(candidate);
        let mut score = [0.0; MAX_N];
        for rf in refs {
            let (vr, nr, lr) = self.vector(rf);
            let delta = lh as f64 - lr as f64;
            let gauss = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..MAX_N {
                let mut val: f64 = vh[n]
                    .iter()
                    .map(|(g, h)| {
                        let r = vr[n].get(g).copied().unwrap_or(0.0);
                        h.min(r) * r
                    })
                    .sum();
                if nh[n] != 0.0 && nr[n] != 0.0 {
                    val /= nh[n] * nr[n];
                }
                score[n] += val * gauss;
            }
        }
        let mean = score.iter().sum::<f64>() / MAX_N as f64;
        Ok(mean / refs.len() as f64 * 10.0)
    }
}

/// CIDEr-D for every item of a corpus; returns (mean, per-item).
pub fn cider_d(items: &[(Vec<String>, Vec<Vec<String>>)]) -> Result<(f64, Vec<f64>), MetricError> {
    if items.len() < 2 {
        return Err(MetricError::DegenerateCorpus(items.len()));
    }
    let ref_sets: Vec<Vec<Vec<String>>> = items.iter().map(|(_, r)| r.clone()).collect();
    let idf = CorpusIdf::new(&ref_sets);
    let per: Vec<f64> = items
        .iter()
        .map(|(c, r)| idf.cider_d(c, r))
        .collect::<Result<_, _>>()?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapScores {
    pub bleu: [f64; MAX_N],
    pub rouge_l: f64,
    pub cider_d: f64,
}

impl CapScores {
    pub fn bleu4(&self) -> f64 {
        self.bleu[MAX_N - 1]
    }

    pub fn scaled(&self, r: f64) -> CapScores {
        CapScores {
            bleu: self.bleu.map(|b| b * r),
            rouge_l: self.rouge_l * r,
            cider_d: self.cider_d * r,
        }
    }

    /// Scores multiplied by `L_gt / max(L_gt, L_pred)`.
    pub fn penalized(&self, l_gt: f64, l_pred: f64) -> Result<CapScores, MetricError> {
        Ok(self.scaled(length_ratio(l_gt, l_pred)?))
    }

    pub fn mean(items: &[CapScores]) -> Option<CapScores> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let mut bleu = [0.0; MAX_N];
        for s in items {
            for (b, x) in bleu.iter_mut().zip(s.bleu) {
                *b += x / n;
            }
        }
        Some(CapScores {
            bleu,
            rouge_l: items.iter().map(|s| s.rouge_l).sum::<f64>() / n,
            cider_d: items.iter().map(|s| s.cider_d).sum::<f64>() / n,
        })
    }
}

/// Scores every (candidate, references) pair of a corpus, raw text in.
pub fn score_corpus(items: &[(String, Vec<String>)]) -> Result<Vec<CapScores>, MetricError> {
    let toks: Vec<(Vec<String>, Vec<Vec<String>>)> = items
        .iter()
        .map(|(c, rs)| (tokenize(c), rs.iter().map(|r| tokenize(r)).collect()))
        .collect();
    let (_, cider) = cider_d(&toks)?;
    toks.iter()
        .zip(cider)
        .map(|((c, rs), cd)| {
            let b = bleu(c, rs, MAX_N)?;
            Ok(CapScores {
                bleu: [b[0], b[1], b[2], b[3]],
                rouge_l: rouge_l(c, rs)?,
                cider_d: cd,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer() {
        assert_eq!(t("There is a Brown bed, in the view."), ["there", "is", "a", "brown", "bed", "in", "the", "view"]);
        assert!(t("  ... ").is_empty());
        assert_eq!(t("teddy-bear"), ["teddybear"]);
    }

    #[test]
    fn identity_and_disjoint() {
        let c = t("a red cup on a table");
        let b = bleu(&c, &[c.clone()], 4).unwrap();
        assert_eq!(b, vec![1.0; 4]);
        assert_eq!(rouge_l(&c, &[c.clone()]).unwrap(), 1.0);
        let d = bleu(&t("green plant"), &[c.clone()], 4).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(bleu(&[], &[c.clone()], 4).unwrap(), vec![0.0; 4]);
        assert_eq!(rouge_l(&[], &[c.clone()]).unwrap(), 0.0);
        assert!(bleu(&c, &[], 4).is_err());
        assert!(rouge_l(&c, &[]).is_err());
    }

    #[test]
    fn rouge_hand_lcs() {
        let r = rouge_l(&t("a b c d"), &[t("a c b d")]).unwrap();
        assert!((r - 0.75).abs() < 1e-15);
        let more = rouge_l(&t("a b c d"), &[t("a c b d"), t("x y")]).unwrap();
        assert_eq!(more, r);
    }

    #[test]
    fn cider_edge_cases() {
        let items = vec![
            (t("red cup near wooden chair"), vec![t("red cup near wooden chair")]),
            (t("zebra yak"), vec![t("a blue bowl on the floor")]),
        ];
        let (_, per) = cider_d(&items).unwrap();
        assert!((per[0] - 10.0).abs() < 1e-12);
        assert_eq!(per[1], 0.0);
        assert_eq!(cider_d(&items[..1]).unwrap_err(), MetricError::DegenerateCorpus(1));
    }

    #[test]
    fn penalty() {
        let s = CapScores { bleu: [0.8, 0.6, 0.4, 0.2], rouge_l: 0.5, cider_d: 40.0 };
        let p = s.penalized(6.0, 8.0).unwrap();
        assert_eq!(p.cider_d, 30.0);
        assert_eq!(s.penalized(6.0, 5.0).unwrap(), s);
        assert!(p.bleu4() <= s.bleu4() && p.rouge_l <= s.rouge_l);
    }

    proptest! {
        #[test]
        fn unigram_bag_property(words in prop::collection::vec(0u8..6, 4..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cand: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
            let mut perm = cand.clone();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let refs = vec![cand.clone()];
            let a = bleu(&cand, &refs, 4).unwrap();
            let b = bleu(&perm, &refs, 4).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-12);
            prop_assert_eq!(a[3], 1.0);
            prop_assert!(b.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn extra_reference_never_hurts_rouge(a in "[a-d ]{1,20}", b in "[a-d ]{1,20}", c in "[a-d ]{1,20}") {
            let (a, b, c) = (t(&a), t(&b), t(&c));
            prop_assume!(!a.is_empty());
            let one = rouge_l(&a, &[b.clone()]).unwrap();
            let two = rouge_l(&a, &[b, c]).unwrap();
            prop_assert!(two >= one);
            prop_assert!((0.0..=1.0).contains(&two));
        }
    }
}
