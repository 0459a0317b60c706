use serde::{Deserialize, Serialize};

use crate::qa::Difficulty;

/// How a scored candidate list turns into a predicted answer set.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    /// The single top-scored candidate.
    Top,
    /// Every candidate whose sigmoid score exceeds 0.5.
    Threshold,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub acc: f64,
    pub f1: f64,
    pub em: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all: Metrics,
    pub easy: Metrics,
    pub hard: Metrics,
}

impl EvalReport {
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (name, m) in [("all", &self.all), ("easy", &self.easy), ("hard", &self.hard)] {
            out.push((format!("{name}.count"), m.count.to_string()));
            out.push((format!("{name}.acc"), format!("{:.6}", m.acc)));
            out.push((format!("{name}.f1"), format!("{:.6}", m.f1)));
            out.push((format!("{name}.em"), format!("{:.6}", m.em)));
        }
        out
    }
}

/// Per-example precision, recall and F1 of `predicted` against `gold`
/// (both as candidate flags). An empty prediction scores 0.
pub fn prf(predicted: &[bool], gold: &[bool]) -> (f64, f64, f64) {
    let tp = predicted.iter().zip(gold).filter(|(p, g)| **p && **g).count() as f64;
    let np = predicted.iter().filter(|p| **p).count() as f64;
    let ng = gold.iter().filter(|g| **g).count() as f64;
    if np == 0.0 || ng == 0.0 {
        let hit = if np == ng { 1.0 } else { 0.0 };
        return (hit, hit, hit);
    }
    let (p, r) = (tp / np, tp / ng);
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

pub fn predicted_set(scores: &[f64], decision: Decision) -> Vec<bool> {
    match decision {
        Decision::Top => {
            let best = argmax(scores);
            (0..scores.len()).map(|i| Some(i) == best).collect()
        }
        Decision::Threshold => scores.iter().map(|&s| s > 0.0).collect(),
    }
}

fn argmax(scores: &[f64]) -> Option<usize> {
    (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
}

/// ACC counts the top candidate; F1 and EM use the decision rule's set.
pub fn score(results: &[(Vec<f64>, Vec<bool>)], decision: Decision) -> Metrics {
    if results.is_empty() {
        return Metrics::default();
    }
    let (mut acc, mut f1, mut em) = (0.0, 0.0, 0.0);
    for (scores, gold) in results {
        if argmax(scores).is_some_and(|i| gold[i]) {
            acc += 1.0;
        }
        let pred = predicted_set(scores, decision);
        f1 += prf(&pred, gold).2;
        if pred == *gold {
            em += 1.0;
        }
    }
    let n = results.len() as f64;
    Metrics {
        count: results.len(),
        acc: acc / n,
        f1: f1 / n,
        em: em / n,
    }
}

pub fn report(results: &[(Difficulty, Vec<f64>, Vec<bool>)], decision: Decision) -> EvalReport {
    let pick = |d: Option<Difficulty>| -> Vec<(Vec<f64>, Vec<bool>)> {
        results
            .iter()
            .filter(|r| d.is_none_or(|d| r.0 == d))
            .map(|r| (r.1.clone(), r.2.clone()))
            .collect()
    };
    EvalReport {
        all: score(&pick(None), decision),
        easy: score(&pick(Some(Difficulty::Easy)), decision),
        hard: score(&pick(Some(Difficulty::Hard)), decision),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_predicted_one_gold() {
        let (p, r, f1) = prf(&[true, true, false], &[true, false, false]);
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        let m = score(&[(vec![1.0, 1.0, -1.0], vec![true, false, false])], Decision::Threshold);
        assert_eq!(m.em, 0.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let r = vec![
            (vec![3.0, -2.0, -1.0], vec![true, false, false]),
            (vec![-3.0, 2.0, 1.0], vec![false, true, true]),
        ];
        let m = score(&r, Decision::Threshold);
        assert_eq!((m.acc, m.f1, m.em), (1.0, 1.0, 1.0));
    }

    #[test]
    fn difficulty_split() {
        let r = vec![
            (Difficulty::Easy, vec![1.0, 0.0], vec![true, false]),
            (Difficulty::Hard, vec![1.0, 0.0], vec![false, true]),
        ];
        let rep = report(&r, Decision::Top);
        assert_eq!((rep.easy.acc, rep.hard.acc, rep.all.acc), (1.0, 0.0, 0.5));
        assert_eq!((rep.easy.count, rep.hard.count), (1, 1));
    }
}
