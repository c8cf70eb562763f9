use serde::{Deserialize, Serialize};

use super::EvalError;

/// Which similarity a matrix holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Static,
    Dynamic,
    Fused,
}

/// Gallery×probe similarity table, row-major by gallery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub scores: Vec<f64>,
    pub gallery_labels: Vec<String>,
    pub probe_labels: Vec<String>,
    pub channel: Channel,
}

impl ScoreMatrix {
    pub fn new(
        scores: Vec<f64>,
        gallery_labels: Vec<String>,
        probe_labels: Vec<String>,
        channel: Channel,
    ) -> Result<Self, EvalError> {
        if scores.len() != gallery_labels.len() * probe_labels.len() {
            return Err(EvalError::InvalidInput(format!(
                "{} scores for a {}x{} matrix",
                scores.len(),
                gallery_labels.len(),
                probe_labels.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(EvalError::InvalidInput(format!("non-finite score {s}")));
        }
        Ok(Self {
            scores,
            gallery_labels,
            probe_labels,
            channel,
        })
    }

    pub fn n_gallery(&self) -> usize {
        self.gallery_labels.len()
    }

    pub fn n_probe(&self) -> usize {
        self.probe_labels.len()
    }

    pub fn get(&self, g: usize, p: usize) -> f64 {
        self.scores[g * self.n_probe() + p]
    }

    /// Same labels, every score passed through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            scores: self.scores.iter().map(|&s| f(s)).collect(),
            ..self.clone()
        }
    }

    fn check_probes_enrolled(&self) -> Result<(), EvalError> {
        for p in &self.probe_labels {
            if !self.gallery_labels.contains(p) {
                return Err(EvalError::Protocol(format!("probe subject {p:?} has no gallery entry")));
            }
        }
        Ok(())
    }

    /// Gallery subjects ranked for probe `p`: each subject scores the max
    /// over its gallery entries; ties go to the subject whose best entry
    /// has the smaller gallery index. Returns `(label, score)` best first.
    fn ranked_subjects(&self, p: usize) -> Vec<(&str, f64, usize)> {
        let mut best: Vec<(&str, f64, usize)> = Vec::new();
        for g in 0..self.n_gallery() {
            let label = self.gallery_labels[g].as_str();
            let s = self.get(g, p);
            match best.iter_mut().find(|(l, _, _)| *l == label) {
                Some(entry) => {
                    if s > entry.1 {
                        entry.1 = s;
                        entry.2 = g;
                    }
                }
                None => best.push((label, s, g)),
            }
        }
        best.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        best
    }
}

/// Rank-1 identification accuracy with tie accounting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rank1 {
    pub accuracy: f64,
    pub n_probes: usize,
    /// Probes whose top score was shared by more than one gallery subject.
    pub ties: usize,
}

pub fn rank1(m: &ScoreMatrix) -> Result<Rank1, EvalError> {
    m.check_probes_enrolled()?;
    if m.n_probe() == 0 {
        return Err(EvalError::InvalidInput("empty probe set".into()));
    }
    let mut correct = 0usize;
    let mut ties = 0usize;
    for p in 0..m.n_probe() {
        let ranked = m.ranked_subjects(p);
        if ranked.len() > 1 && ranked[1].1 == ranked[0].1 {
            ties += 1;
        }
        if ranked[0].0 == m.probe_labels[p] {
            correct += 1;
        }
    }
    Ok(Rank1 {
        accuracy: correct as f64 / m.n_probe() as f64,
        n_probes: m.n_probe(),
        ties,
    })
}

/// Cumulative match characteristic: entry `r-1` is the fraction of probes
/// whose true subject ranks within the top `r`.
pub fn cmc(m: &ScoreMatrix, max_rank: usize) -> Result<Vec<f64>, EvalError> {
    m.check_probes_enrolled()?;
    if m.n_probe() == 0 {
        return Err(EvalError::InvalidInput("empty probe set".into()));
    }
    let mut hits = vec![0usize; max_rank];
    for p in 0..m.n_probe() {
        let ranked = m.ranked_subjects(p);
        let pos = ranked.iter().position(|(l, _, _)| *l == m.probe_labels[p]).expect("probe enrolled");
        for h in hits.iter_mut().skip(pos) {
            *h += 1;
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / m.n_probe() as f64).collect())
}

/// True accept rate at each false accept rate target. The threshold is the
/// smallest observed score whose empirical FAR (impostor scores ≥
/// threshold) does not exceed the target; with no such score nothing is
/// accepted.
pub fn tar_at_far(m: &ScoreMatrix, far_points: &[f64]) -> Result<Vec<f64>, EvalError> {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for g in 0..m.n_gallery() {
        for p in 0..m.n_probe() {
            if m.gallery_labels[g] == m.probe_labels[p] {
                genuine.push(m.get(g, p));
            } else {
                impostor.push(m.get(g, p));
            }
        }
    }
    if impostor.is_empty() {
        return Err(EvalError::UndefinedFar("matrix has no impostor pairs".into()));
    }
    if genuine.is_empty() {
        return Err(EvalError::InvalidInput("matrix has no genuine pairs".into()));
    }
    impostor.sort_by(|a, b| b.total_cmp(a));
    let mut all: Vec<f64> = m.scores.clone();
    all.sort_by(f64::total_cmp);
    far_points
        .iter()
        .map(|&far| {
            if !(0.0..=1.0).contains(&far) {
                return Err(EvalError::InvalidInput(format!("FAR target {far} outside [0, 1]")));
            }
            // At most `k` impostors may reach the threshold.
            let k = (far * impostor.len() as f64 + 1e-9).floor() as usize;
            let threshold = if k >= impostor.len() {
                Some(all[0])
            } else {
                let bound = impostor[k];
                all.iter().copied().find(|&s| s > bound)
            };
            Ok(match threshold {
                Some(t) => genuine.iter().filter(|&&s| s >= t).count() as f64 / genuine.len() as f64,
                None => 0.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identity_matrix_is_perfect() {
        let m = ScoreMatrix::new(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            labels(&["a", "b", "c"]),
            labels(&["a", "b", "c"]),
            Channel::Fused,
        )
        .unwrap();
        assert_eq!(rank1(&m).unwrap().accuracy, 1.0);
        assert_eq!(cmc(&m, 3).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(tar_at_far(&m, &[0.01, 0.05]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn ties_go_to_smaller_gallery_index_and_are_counted() {
        let m = ScoreMatrix::new(vec![0.5, 0.5], labels(&["b", "a"]), labels(&["a"]), Channel::Fused).unwrap();
        let r = rank1(&m).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.ties, 1);
    }

    #[test]
    fn unenrolled_probe_is_a_protocol_error() {
        let m = ScoreMatrix::new(vec![0.5], labels(&["a"]), labels(&["z"]), Channel::Fused).unwrap();
        match rank1(&m) {
            Err(EvalError::Protocol(msg)) => assert!(msg.contains("\"z\"")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn far_needs_impostors() {
        let m = ScoreMatrix::new(vec![0.5], labels(&["a"]), labels(&["a"]), Channel::Fused).unwrap();
        assert!(matches!(tar_at_far(&m, &[0.01]), Err(EvalError::UndefinedFar(_))));
    }
}
