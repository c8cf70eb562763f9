use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::clip_store::Clip;

/// A set of subjects, either an inclusive numeric id range or explicit ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectSet {
    Range([u64; 2]),
    Ids(Vec<String>),
}

impl SubjectSet {
    pub fn contains(&self, subject: &str) -> bool {
        match self {
            Self::Range([lo, hi]) => subject.trim().parse::<u64>().is_ok_and(|v| (*lo..=*hi).contains(&v)),
            Self::Ids(ids) => ids.iter().any(|i| i == subject),
        }
    }

    fn overlaps(&self, other: &SubjectSet) -> Option<String> {
        match (self, other) {
            (Self::Range([a, b]), Self::Range([c, d])) => (a.max(c) <= b.min(d)).then(|| a.max(c).to_string()),
            (Self::Ids(ids), s) | (s, Self::Ids(ids)) => ids.iter().find(|i| s.contains(i)).cloned(),
        }
    }
}

/// Conjunction of optional constraints on a clip's labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Clause {
    pub conditions: Option<Vec<String>>,
    pub views: Option<Vec<f64>>,
    pub video_indices: Option<Vec<u32>>,
}

impl Clause {
    fn matches(&self, c: &Clip) -> bool {
        self.conditions.as_ref().is_none_or(|s| s.contains(&c.condition_id))
            && self.views.as_ref().is_none_or(|v| v.iter().any(|&x| (x - c.view_deg).abs() < 1e-6))
            && self
                .video_indices
                .as_ref()
                .is_none_or(|v| c.video_index.is_some_and(|i| v.contains(&i)))
    }
}

/// Disjunction of clauses; empty matches every clip.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Selector(pub Vec<Clause>);

impl Selector {
    pub fn matches(&self, c: &Clip) -> bool {
        self.0.is_empty() || self.0.iter().any(|cl| cl.matches(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rank1,
    TarAtFar,
}

/// How a probe's score against a multi-clip gallery subject is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GalleryAggregation {
    #[default]
    Max,
}

fn default_far() -> Vec<f64> {
    vec![0.01, 0.05]
}

/// Gallery/probe partition of a dataset plus the metrics to report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Encodes conventions not fully pinned down by the protocol source.
    #[serde(default)]
    pub best_effort: bool,
    pub train_subjects: SubjectSet,
    pub test_subjects: SubjectSet,
    #[serde(default)]
    pub train_selector: Selector,
    pub gallery_selector: Selector,
    pub probe_selector: Selector,
    pub metrics: Vec<Metric>,
    #[serde(default = "default_far")]
    pub far_points: Vec<f64>,
    /// Score each (gallery view, probe view) pair with distinct views
    /// separately and report the mean.
    #[serde(default)]
    pub cross_view: bool,
    #[serde(default)]
    pub aggregation: GalleryAggregation,
    /// Overrides the run's fusion weight.
    #[serde(default)]
    pub alpha: Option<f64>,
}

/// Clips of one protocol split.
#[derive(Clone, Debug)]
pub struct ProtocolSplit<'a> {
    pub train: Vec<&'a Clip>,
    pub gallery: Vec<&'a Clip>,
    pub probe: Vec<&'a Clip>,
}

impl ProtocolSpec {
    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::Protocol(format!("cannot read {}: {e}", path.display())))?;
        let spec: Self = serde_json::from_str(&text)
            .map_err(|e| EvalError::Protocol(format!("invalid protocol {}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("protocol serializes")
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if let Some(s) = self.train_subjects.overlaps(&self.test_subjects) {
            return Err(EvalError::Protocol(format!(
                "{}: subject {s} is in both the train and test sets",
                self.name
            )));
        }
        if self.metrics.is_empty() {
            return Err(EvalError::Protocol(format!("{}: no metrics requested", self.name)));
        }
        if let Some(f) = self.far_points.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(EvalError::Protocol(format!("{}: FAR point {f} outside [0, 1]", self.name)));
        }
        if let Some(a) = self.alpha.filter(|a| !(0.0..=1.0).contains(a)) {
            return Err(EvalError::Protocol(format!("{}: alpha {a} outside [0, 1]", self.name)));
        }
        Ok(())
    }

    /// Partitions `clips`; fails when the gallery or probe side is empty.
    pub fn split<'a>(&self, clips: &'a [Clip]) -> Result<ProtocolSplit<'a>, EvalError> {
        self.validate()?;
        let train = clips
            .iter()
            .filter(|c| self.train_subjects.contains(&c.subject_id) && self.train_selector.matches(c))
            .collect();
        let test = |sel: &Selector| -> Vec<&'a Clip> {
            clips
                .iter()
                .filter(|c| self.test_subjects.contains(&c.subject_id) && sel.matches(c))
                .collect()
        };
        let split = ProtocolSplit {
            train,
            gallery: test(&self.gallery_selector),
            probe: test(&self.probe_selector),
        };
        if split.gallery.is_empty() || split.probe.is_empty() {
            return Err(EvalError::Protocol(format!(
                "{}: empty {} set under the test subjects",
                self.name,
                if split.gallery.is_empty() { "gallery" } else { "probe" }
            )));
        }
        Ok(split)
    }
}

fn clause(conditions: &[&str], views: Option<&[f64]>, videos: Option<std::ops::RangeInclusive<u32>>) -> Clause {
    Clause {
        conditions: Some(conditions.iter().map(|s| s.to_string()).collect()),
        views: views.map(<[f64]>::to_vec),
        video_indices: videos.map(|r| r.collect()),
    }
}

const CASIA_VIEWS: [f64; 11] = [0.0, 18.0, 36.0, 54.0, 72.0, 90.0, 108.0, 126.0, 144.0, 162.0, 180.0];

/// Ready-made protocol specs. CASIA-B specs assume condition labels
/// `nm`/`bg`/`cl` with per-condition video indices; FVG specs assume
/// session labels `s1`/`s2`/`s3` as conditions with per-session video
/// indices 1..=12.
pub fn builtin_protocols() -> Vec<ProtocolSpec> {
    let mut out = Vec::new();
    let base = |name: &str, description: &str, train: [u64; 2], test: [u64; 2]| ProtocolSpec {
        name: name.to_string(),
        description: description.to_string(),
        best_effort: false,
        train_subjects: SubjectSet::Range(train),
        test_subjects: SubjectSet::Range(test),
        train_selector: Selector::default(),
        gallery_selector: Selector::default(),
        probe_selector: Selector::default(),
        metrics: vec![Metric::Rank1],
        far_points: default_far(),
        cross_view: false,
        aggregation: GalleryAggregation::Max,
        alpha: None,
    };

    for (cond, videos) in [("nm", 5..=6), ("bg", 1..=2), ("cl", 1..=2)] {
        let mut p = base(
            &format!("casia_b_p1_{cond}"),
            "CASIA-B, subjects 1-74 train / 75-124 test; gallery NM #1-4, all views; \
             mean over cross-view pairs excluding identical views",
            [1, 74],
            [75, 124],
        );
        p.gallery_selector = Selector(vec![clause(&["nm"], None, Some(1..=4))]);
        p.probe_selector = Selector(vec![clause(&[cond], None, Some(videos))]);
        p.cross_view = true;
        out.push(p);
    }

    let mut p = base(
        "casia_b_p2",
        "CASIA-B walking-direction protocol, NM only: subjects 1-24 train (all views), 25-124 test; \
         gallery NM #1-4 at 90 degrees, probe the first two NM videos at every other view",
        [1, 24],
        [25, 124],
    );
    p.best_effort = true;
    p.train_selector = Selector(vec![clause(&["nm"], None, None)]);
    p.gallery_selector = Selector(vec![clause(&["nm"], Some(&[90.0]), Some(1..=4))]);
    let other_views: Vec<f64> = CASIA_VIEWS.iter().copied().filter(|&v| v != 90.0).collect();
    p.probe_selector = Selector(vec![clause(&["nm"], Some(&other_views), Some(1..=2))]);
    out.push(p);

    let mid_views = [54.0, 72.0, 90.0, 108.0, 126.0, 144.0];
    for (cond, label) in [("bg", "BG"), ("cl", "CL")] {
        let mut p = base(
            &format!("casia_b_p3_{cond}"),
            &format!(
                "CASIA-B appearance protocol ({label}): 54-144 degree views, subjects 1-24 train, \
                 25-58 test; gallery NM #1-4, probe {label} #1-2, mean over cross-view pairs"
            ),
            [1, 24],
            [25, 58],
        );
        p.best_effort = true;
        p.train_selector = Selector(vec![clause(&["nm", "bg", "cl"], Some(&mid_views), None)]);
        p.gallery_selector = Selector(vec![clause(&["nm"], Some(&mid_views), Some(1..=4))]);
        p.probe_selector = Selector(vec![clause(&[cond], Some(&mid_views), Some(1..=2))]);
        p.cross_view = true;
        out.push(p);
    }

    let fvg: [(&str, Vec<Clause>); 5] = [
        ("ws", vec![clause(&["s1"], None, Some(4..=9)), clause(&["s2"], None, Some(4..=6))]),
        ("bght", vec![clause(&["s1"], None, Some(10..=12))]),
        ("cl", vec![clause(&["s2"], None, Some(7..=9))]),
        ("mp", vec![clause(&["s2"], None, Some(10..=12))]),
        (
            "all",
            vec![
                clause(&["s1", "s2"], None, Some(1..=1)),
                clause(&["s1", "s2"], None, Some(3..=12)),
                clause(&["s3"], None, Some(1..=12)),
            ],
        ),
    ];
    for (name, probe) in fvg {
        let mut p = base(
            &format!("fvg_{name}"),
            "FVG, subjects 1-136 train / 137-226 test; gallery video 2 of each session",
            [1, 136],
            [137, 226],
        );
        let gallery_sessions: &[&str] = match name {
            "ws" => &["s1", "s2"],
            "bght" => &["s1"],
            "cl" | "mp" => &["s2"],
            _ => &["s1", "s2"],
        };
        p.gallery_selector = Selector(vec![clause(gallery_sessions, None, Some(2..=2))]);
        p.probe_selector = Selector(probe);
        p.metrics = vec![Metric::TarAtFar];
        out.push(p);
    }
    out
}

/// The desk-scale synthetic benchmark: 16 training subjects, 8 test
/// subjects, gallery condition `c0`, probe condition `c1`.
pub fn synthetic_protocol() -> ProtocolSpec {
    ProtocolSpec {
        name: "synthetic".into(),
        description: "synthetic walkers: subjects 1-16 train, 17-24 test; gallery c0, probe c1".into(),
        best_effort: false,
        train_subjects: SubjectSet::Range([1, 16]),
        test_subjects: SubjectSet::Range([17, 24]),
        train_selector: Selector::default(),
        gallery_selector: Selector(vec![Clause { conditions: Some(vec!["c0".into()]), ..Clause::default() }]),
        probe_selector: Selector(vec![Clause { conditions: Some(vec!["c1".into()]), ..Clause::default() }]),
        metrics: vec![Metric::Rank1, Metric::TarAtFar],
        far_points: default_far(),
        cross_view: false,
        aggregation: GalleryAggregation::Max,
        alpha: None,
    }
}
