//! Generation metrics: corpus BLEU (pooled clipped counts, smoothed),
//! ROUGE-L F-measure, and the mean of Distinct-1/Distinct-2.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, MARKERS};

pub const DEFAULT_MAX_N: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricConfig {
    pub bleu: String,
    pub rouge: String,
    pub distinct: String,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            bleu: "corpus-bleu-4, uniform weights, add-one smoothing on zero-match higher orders"
                .into(),
            rouge: "rouge-l f-measure, mean over pairs".into(),
            distinct: "mean of pooled distinct-1 and distinct-2".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub bleu: f64,
    pub rouge_l: f64,
    pub distinct: f64,
    pub n_pairs: usize,
    pub metric_config: MetricConfig,
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], u64> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Pooled clipped n-gram (matched, total) pairs for n = 1..=max_n.
pub fn modified_precisions(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    max_n: usize,
) -> Vec<(u64, u64)> {
    (1..=max_n)
        .map(|n| {
            let mut matched = 0u64;
            let mut total = 0u64;
            for (hyp, reference) in hypotheses.iter().zip(references) {
                let hyp_counts = ngram_counts(hyp, n);
                let ref_counts = ngram_counts(reference, n);
                for (gram, count) in &hyp_counts {
                    matched += (*count).min(ref_counts.get(gram).copied().unwrap_or(0));
                }
                total += hyp.len().saturating_sub(n - 1) as u64;
            }
            (matched, total)
        })
        .collect()
}

fn check_pairs(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<()> {
    if hypotheses.is_empty() {
        return Err(Error::data("metric corpus is empty"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::data(format!(
            "hypothesis/reference count mismatch: {} vs {}",
            hypotheses.len(),
            references.len()
        )));
    }
    Ok(())
}

/// Corpus BLEU with uniform weights over 1..=max_n, brevity penalty
/// min(1, e^{1-r/c}), and add-one smoothing for higher orders with zero
/// matches; an order with no n-grams anywhere contributes a neutral 1.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    check_pairs(hypotheses, references)?;
    let c: u64 = hypotheses.iter().map(|h| h.len() as u64).sum();
    let r: u64 = references.iter().map(|h| h.len() as u64).sum();
    if c == 0 {
        return Ok(if r == 0 { 1.0 } else { 0.0 });
    }
    let mut log_sum = 0.0f64;
    for (n, &(matched, total)) in modified_precisions(hypotheses, references, max_n).iter().enumerate() {
        let p = if total == 0 {
            1.0
        } else if matched == 0 {
            if n == 0 {
                return Ok(0.0); // no unigram overlap at all
            }
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let geo_mean = (log_sum / max_n as f64).exp();
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * geo_mean)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-pair ROUGE-L F-measure (F = 2PR/(P+R), 0 when the LCS is empty).
pub fn rouge_l(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    check_pairs(hypotheses, references)?;
    let sum: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(hyp, reference)| {
            let lcs = lcs_len(hyp, reference);
            if lcs == 0 || hyp.is_empty() || reference.is_empty() {
                return 0.0;
            }
            let p = lcs as f64 / hyp.len() as f64;
            let r = lcs as f64 / reference.len() as f64;
            2.0 * p * r / (p + r)
        })
        .sum();
    Ok(sum / hypotheses.len() as f64)
}

fn distinct_n(hypotheses: &[Vec<String>], n: usize) -> f64 {
    let mut seen: BTreeSet<&[String]> = BTreeSet::new();
    let mut total = 0u64;
    for hyp in hypotheses {
        if hyp.len() >= n {
            for g in hyp.windows(n) {
                seen.insert(g);
                total += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Mean of pooled distinct-1 and distinct-2 ratios.
pub fn distinct(hypotheses: &[Vec<String>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::data("metric corpus is empty"));
    }
    if hypotheses.iter().all(|h| h.is_empty()) {
        return Err(Error::data("all hypotheses are empty"));
    }
    Ok((distinct_n(hypotheses, 1) + distinct_n(hypotheses, 2)) / 2.0)
}

/// Shared tokenization for both sides of an evaluation: markers stripped,
/// lowercased, whitespace split.
pub fn eval_tokenize(line: &str) -> Vec<String> {
    let mut s = line.to_string();
    for m in MARKERS {
        s = s.replace(m, " ");
    }
    s.split_whitespace().map(|t| t.to_lowercase()).collect()
}

pub fn evaluate_pairs(
    generations: &[String],
    references: &[String],
) -> Result<EvalReport> {
    if generations.len() != references.len() {
        return Err(Error::data(format!(
            "generations/references line-count mismatch: {} vs {}",
            generations.len(),
            references.len()
        )));
    }
    let hyp_tokens: Vec<Vec<String>> = generations.iter().map(|l| eval_tokenize(l)).collect();
    let ref_tokens: Vec<Vec<String>> = references.iter().map(|l| eval_tokenize(l)).collect();
    Ok(EvalReport {
        bleu: bleu(&hyp_tokens, &ref_tokens, DEFAULT_MAX_N)?,
        rouge_l: rouge_l(&hyp_tokens, &ref_tokens)?,
        distinct: distinct(&hyp_tokens)?,
        n_pairs: hyp_tokens.len(),
        metric_config: MetricConfig::default(),
    })
}

/// Score a generations file against an aligned references file.
pub fn evaluate_run(generations_file: &Path, references_file: &Path) -> Result<EvalReport> {
    let read = |p: &Path| -> Result<Vec<String>> {
        Ok(fs::read_to_string(p)?.lines().map(|l| l.to_string()).collect())
    };
    evaluate_pairs(&read(generations_file)?, &read(references_file)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| t.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn identity_scores_one() {
        let h = toks(&["the cat sat on the mat", "hello there"]);
        assert!((bleu(&h, &h, 4).unwrap() - 1.0).abs() < 1e-12);
        assert!((rouge_l(&h, &h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_unigram_precision_by_hand() {
        let h = toks(&["the the the"]);
        let r = toks(&["the cat sat"]);
        let p = modified_precisions(&h, &r, 4);
        assert_eq!(p[0], (1, 3)); // "the" clipped to its single ref occurrence
        assert_eq!(p[1], (0, 2));
        assert_eq!(p[2], (0, 1));
        assert_eq!(p[3], (0, 0));
        // p1=1/3, p2=1/3 (add-one), p3=1/2 (add-one), p4=1 (no 4-grams)
        let expected = (1.0f64 / 18.0).powf(0.25);
        assert!((bleu(&h, &r, 4).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn doubling_pairs_is_a_noop() {
        // Matches exist at every order, so no smoothing is involved and the
        // pooled ratios are exactly scale-invariant.
        let h = toks(&["a b c d x", "a b c d e"]);
        let r = toks(&["a b c d y", "a b c d e"]);
        let h2 = toks(&["a b c d x", "a b c d e", "a b c d x", "a b c d e"]);
        let r2 = toks(&["a b c d y", "a b c d e", "a b c d y", "a b c d e"]);
        assert!((bleu(&h, &r, 4).unwrap() - bleu(&h2, &r2, 4).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_unigram_overlap_is_zero_bleu() {
        let h = toks(&["x y z"]);
        let r = toks(&["a b c"]);
        assert_eq!(bleu(&h, &r, 4).unwrap(), 0.0);
    }

    #[test]
    fn brevity_penalty_applies() {
        // hyp shorter than ref, perfect precision: BLEU = e^{1 - 4/2} = e^{-1}.
        let h = toks(&["a b"]);
        let r = toks(&["a b c d"]);
        let score = bleu(&h, &r, 1).unwrap();
        assert!((score - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs() {
        assert!(bleu(&[], &[], 4).is_err());
        let h = toks(&[""]);
        let r = toks(&["a b"]);
        assert_eq!(bleu(&h, &r, 4).unwrap(), 0.0);
        assert_eq!(bleu(&toks(&[""]), &toks(&[""]), 4).unwrap(), 1.0);
    }

    #[test]
    fn rouge_by_hand() {
        let h = toks(&["a b c d"]);
        let r = toks(&["a c d"]);
        assert!((rouge_l(&h, &r).unwrap() - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_disjoint_is_zero() {
        assert_eq!(rouge_l(&toks(&["x y"]), &toks(&["a b"])).unwrap(), 0.0);
    }

    #[test]
    fn rouge_is_mean_over_pairs() {
        let h = toks(&["a b c d", "x"]);
        let r = toks(&["a c d", "x"]);
        assert!((rouge_l(&h, &r).unwrap() - (6.0 / 7.0 + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_by_hand() {
        assert!((distinct(&toks(&["a b c"])).unwrap() - 1.0).abs() < 1e-12);
        assert!((distinct(&toks(&["a a a"])).unwrap() - 5.0 / 12.0).abs() < 1e-12);
        assert!((distinct(&toks(&["a b", "a b"])).unwrap() - 0.5).abs() < 1e-12);
        // no bigrams anywhere → distinct-2 contributes 0
        assert!((distinct(&toks(&["a", "b"])).unwrap() - 0.5).abs() < 1e-12);
        assert!(distinct(&toks(&["", ""])).is_err());
        assert!(distinct(&[]).is_err());
    }

    #[test]
    fn order_invariance() {
        let h = toks(&["a b", "c d e", "f"]);
        let r = toks(&["a x", "c d y", "f"]);
        let h2 = toks(&["f", "a b", "c d e"]);
        let r2 = toks(&["f", "a x", "c d y"]);
        assert!((bleu(&h, &r, 4).unwrap() - bleu(&h2, &r2, 4).unwrap()).abs() < 1e-12);
        assert!((rouge_l(&h, &r).unwrap() - rouge_l(&h2, &r2).unwrap()).abs() < 1e-12);
        assert!((distinct(&h).unwrap() - distinct(&h2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn relabeling_invariance() {
        fn map(t: &str) -> &str {
            match t {
                "a" => "q",
                "b" => "w",
                "c" => "z",
                other => other,
            }
        }
        let h = toks(&["a b c a", "b c"]);
        let r = toks(&["a c c", "b b"]);
        let relabel = |xs: &[Vec<String>]| -> Vec<Vec<String>> {
            xs.iter().map(|s| s.iter().map(|t| map(t).to_string()).collect()).collect()
        };
        assert!((bleu(&h, &r, 4).unwrap() - bleu(&relabel(&h), &relabel(&r), 4).unwrap()).abs() < 1e-12);
        assert!((rouge_l(&h, &r).unwrap() - rouge_l(&relabel(&h), &relabel(&r)).unwrap()).abs() < 1e-12);
        assert!((distinct(&h).unwrap() - distinct(&relabel(&h)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_run_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let gen = dir.path().join("gen.txt");
        let refs = dir.path().join("ref.txt");
        std::fs::write(&gen, "Hello there [eos]\nthe cat sat\n").unwrap();
        std::fs::write(&refs, "hello there\nthe cat sat [eos]\n").unwrap();
        let report = evaluate_run(&gen, &refs).unwrap();
        assert_eq!(report.n_pairs, 2);
        assert!((report.bleu - 1.0).abs() < 1e-12);
        assert!((report.rouge_l - 1.0).abs() < 1e-12);

        std::fs::write(&refs, "just one line\n").unwrap();
        assert!(evaluate_run(&gen, &refs).is_err());
    }

    #[test]
    fn report_serializes_with_expected_keys() {
        let report = evaluate_pairs(
            &["a b".to_string()],
            &["a b".to_string()],
        )
        .unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["bleu", "rouge_l", "distinct", "n_pairs", "metric_config"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
    }
}
