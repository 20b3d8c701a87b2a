//! Ten-annotator VQA consensus accuracy.

use super::MetricError;
use crate::text::MetricTokenizer;

const NUMBER_WORDS: [(&str, &str); 11] = [
    ("zero", "0"),
    ("one", "1"),
    ("two", "2"),
    ("three", "3"),
    ("four", "4"),
    ("five", "5"),
    ("six", "6"),
    ("seven", "7"),
    ("eight", "8"),
    ("nine", "9"),
    ("ten", "10"),
];

/// Lowercase, punctuation stripped, articles dropped, number words as
/// digits, single-spaced.
pub fn normalize_answer(answer: &str) -> String {
    MetricTokenizer::new(true)
        .tokenize(answer)
        .into_iter()
        .map(|w| {
            NUMBER_WORDS
                .iter()
                .find(|(word, _)| *word == w)
                .map_or(w.clone(), |(_, d)| d.to_string())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Accuracy against already-normalized strings.
///
/// With `n >= 2` gold answers this is the leave-one-annotator-out average
/// `(1/n) * sum_j min(#{i != j : g_i = c} / 3, 1)`; a single gold answer
/// scores `min(#matches / 3, 1)`.
pub fn vqa_accuracy_normalized(candidate: &str, gold: &[String]) -> Result<f64, MetricError> {
    let n = gold.len();
    if n == 0 {
        return Err(MetricError::EmptyGold);
    }
    let matches = gold.iter().filter(|g| *g == candidate).count();
    if n == 1 {
        return Ok((matches as f64 / 3.0).min(1.0));
    }
    let total: f64 = gold
        .iter()
        .map(|g| {
            let others = matches - usize::from(g == candidate);
            (others as f64 / 3.0).min(1.0)
        })
        .sum();
    Ok(total / n as f64)
}

pub fn vqa_accuracy<S: AsRef<str>>(candidate: &str, gold: &[S]) -> Result<f64, MetricError> {
    let gold: Vec<String> = gold.iter().map(|g| normalize_answer(g.as_ref())).collect();
    vqa_accuracy_normalized(&normalize_answer(candidate), &gold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(matching: usize) -> Vec<String> {
        (0..10)
            .map(|i| {
                if i < matching {
                    "cat".to_string()
                } else {
                    format!("other{i}")
                }
            })
            .collect()
    }

    /// Enumerates the ten leave-one-out subsets directly.
    fn leave_one_out_oracle(c: &str, g: &[String]) -> f64 {
        let mut acc = 0.0;
        for skip in 0..g.len() {
            let hits = g
                .iter()
                .enumerate()
                .filter(|(i, x)| *i != skip && x.as_str() == c)
                .count();
            acc += f64::min(1.0, hits as f64 / 3.0);
        }
        acc / g.len() as f64
    }

    #[test]
    fn fixed_cases() {
        assert_eq!(vqa_accuracy("cat", &gold(10)).unwrap(), 1.0);
        assert_eq!(vqa_accuracy("cat", &gold(0)).unwrap(), 0.0);
        assert!((vqa_accuracy("cat", &gold(3)).unwrap() - 0.9).abs() < 1e-15);
        assert!(matches!(
            vqa_accuracy::<&str>("cat", &[]),
            Err(MetricError::EmptyGold)
        ));
    }

    #[test]
    fn matches_oracle_and_is_monotone() {
        let mut prev = -1.0;
        for m in 0..=10 {
            let g = gold(m);
            let got = vqa_accuracy("cat", &g).unwrap();
            assert!((got - leave_one_out_oracle("cat", &g)).abs() < 1e-15);
            assert!(got >= prev);
            prev = got;
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Two Cats!"), "2 cats");
        assert!((vqa_accuracy("a Cat", &gold(3)).unwrap() - 0.9).abs() < 1e-15);
    }
}
