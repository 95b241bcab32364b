//! Aggregate and per-class report, as a text table and as JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::lstq::NO_TUBES_WARNING;
use super::segments::{summarize_panoptic, MotsCounts, PqCounts};
use super::{ptq_metrics, Aggregation, EvalConfig, EvalCounts};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotsClass {
    #[serde(flatten)]
    pub counts: MotsCounts,
    pub gt_segments: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub motsa: Option<f64>,
    pub smotsa: Option<f64>,
    pub ptq: Option<f64>,
    pub sptq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub id: u32,
    pub name: String,
    pub thing: bool,
    /// Point counts.
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou: Option<f64>,
    /// Mean score of the gt tubes whose majority class is this class.
    pub s_assoc: Option<f64>,
    pub tubes: usize,
    pub segments: PqCounts,
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    pub pq_dagger: Option<f64>,
    pub mots: Option<MotsClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub lstq: f64,
    pub s_cls: f64,
    pub s_assoc: f64,
    pub miou: f64,
    pub iou_stuff: f64,
    pub iou_things: f64,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_dagger: f64,
    pub pq_things: f64,
    pub pq_stuff: f64,
    /// PQ with segments spanning whole sequences.
    pub pq_sequence: f64,
    pub ptq: f64,
    pub sptq: f64,
    /// Tracking scores over the summed thing-class counts.
    pub motsa: Option<f64>,
    pub smotsa: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub mots_totals: MotsCounts,
    pub aggregation: Aggregation,
    pub sequences: usize,
    pub scans: usize,
    pub points: u64,
    pub tubes: usize,
    pub warnings: Vec<String>,
    pub classes: Vec<ClassReport>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub(super) fn build(counts: &EvalCounts, config: &EvalConfig) -> MetricReport {
    let mut warnings = Vec::new();
    let cc = &counts.class_counts;
    let s_cls = cc.mean_iou(config.classes.classes());
    let s_assoc = match config.aggregation {
        Aggregation::Pooled => counts.assoc.score(),
        Aggregation::PerSequence => counts.assoc.score_per_sequence(),
    }
    .unwrap_or_else(|| {
        log::warn!("{NO_TUBES_WARNING}");
        warnings.push(NO_TUBES_WARNING.to_string());
        1.0
    });

    let mut tube_scores: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (tube, score) in counts.assoc.tube_scores() {
        if let Some(c) = counts.assoc.tube_class(&tube) {
            tube_scores.entry(c).or_default().push(score);
        }
    }

    let pan = summarize_panoptic(&counts.pq, cc, config);
    let pan_seq = summarize_panoptic(&counts.pq_sequence, cc, config);
    let (ptq, sptq) = ptq_metrics(&counts.pq, &counts.mots, config);

    let mut totals = MotsCounts::default();
    let mut classes = Vec::new();
    for id in config.classes.classes() {
        let thing = config.is_thing(id);
        let [tp, fp, fn_] = cc.tp_fp_fn(id);
        let seg = counts.pq.get(&id).copied().unwrap_or_default();
        let mots = thing.then(|| {
            let m = counts.mots.get(&id).copied().unwrap_or_default();
            totals.merge(&m);
            MotsClass {
                counts: m,
                gt_segments: m.gt_segments(),
                precision: m.precision(),
                recall: m.recall(),
                motsa: m.motsa(),
                smotsa: m.smotsa(),
                ptq: m.ptq(),
                sptq: m.sptq(),
            }
        });
        let scores = tube_scores.get(&id);
        classes.push(ClassReport {
            id,
            name: config.classes.name(id).to_string(),
            thing,
            tp,
            fp,
            fn_,
            iou: cc.iou(id),
            s_assoc: scores.map(|v| mean(v)),
            tubes: scores.map_or(0, Vec::len),
            segments: seg,
            pq: seg.pq(),
            sq: seg.sq(),
            rq: seg.rq(),
            pq_dagger: if thing { seg.pq() } else { cc.iou(id) },
            mots,
        });
    }

    MetricReport {
        lstq: super::lstq(s_cls, s_assoc),
        s_cls,
        s_assoc,
        miou: s_cls,
        iou_stuff: cc.mean_iou(config.classes.classes().filter(|c| !config.is_thing(*c))),
        iou_things: cc.mean_iou(config.classes.classes().filter(|c| config.is_thing(*c))),
        pq: pan.pq,
        sq: pan.sq,
        rq: pan.rq,
        pq_dagger: pan.pq_dagger,
        pq_things: pan.pq_things,
        pq_stuff: pan.pq_stuff,
        pq_sequence: pan_seq.pq,
        ptq,
        sptq,
        motsa: totals.motsa(),
        smotsa: totals.smotsa(),
        precision: totals.precision(),
        recall: totals.recall(),
        mots_totals: totals,
        aggregation: config.aggregation,
        sequences: counts.sequences,
        scans: counts.scans,
        points: counts.points,
        tubes: counts.assoc.num_tubes(),
        warnings,
        classes,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl MetricReport {
    /// Flat `key = value` lines followed by a per-class table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 23] = [
            ("LSTQ", format!("{:.4}", self.lstq)),
            ("S_cls", format!("{:.4}", self.s_cls)),
            ("S_assoc", format!("{:.4}", self.s_assoc)),
            ("mIoU", format!("{:.4}", self.miou)),
            ("IoU_St", format!("{:.4}", self.iou_stuff)),
            ("IoU_Th", format!("{:.4}", self.iou_things)),
            ("PQ", format!("{:.4}", self.pq)),
            ("SQ", format!("{:.4}", self.sq)),
            ("RQ", format!("{:.4}", self.rq)),
            ("PQ_dagger", format!("{:.4}", self.pq_dagger)),
            ("PQ_Th", format!("{:.4}", self.pq_things)),
            ("PQ_St", format!("{:.4}", self.pq_stuff)),
            ("PQ_sequence", format!("{:.4}", self.pq_sequence)),
            ("PTQ", format!("{:.4}", self.ptq)),
            ("sPTQ", format!("{:.4}", self.sptq)),
            ("MOTSA", opt(self.motsa)),
            ("sMOTSA", opt(self.smotsa)),
            ("precision", opt(self.precision)),
            ("recall", opt(self.recall)),
            ("IDS", self.mots_totals.ids.to_string()),
            ("sequences", self.sequences.to_string()),
            ("scans", self.scans.to_string()),
            ("tubes", self.tubes.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<12} = {v}");
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning      = {w}");
        }
        let _ = writeln!(
            s,
            "\n{:<16} {:>2} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "class", "th", "IoU", "S_assoc", "PQ", "SQ", "RQ", "TP", "FP", "FN", "IDS", "MOTSA", "sMOTSA", "prec", "recall"
        );
        for c in &self.classes {
            let (tp, fp, fn_, ids, motsa, smotsa, p, r) = match &c.mots {
                Some(m) => (
                    m.counts.tp.to_string(),
                    m.counts.fp.to_string(),
                    m.counts.fn_.to_string(),
                    m.counts.ids.to_string(),
                    opt(m.motsa),
                    opt(m.smotsa),
                    opt(m.precision),
                    opt(m.recall),
                ),
                None => Default::default(),
            };
            let _ = writeln!(
                s,
                "{:<16} {:>2} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
                c.name,
                if c.thing { "y" } else { "n" },
                opt(c.iou),
                opt(c.s_assoc),
                opt(c.pq),
                opt(c.sq),
                opt(c.rq),
                tp,
                fp,
                fn_,
                ids,
                motsa,
                smotsa,
                p,
                r
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes the text table to `path` and the JSON document next to it.
    /// Returns both paths.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let text_path = path.as_ref().to_path_buf();
        let json_path = if text_path.extension().is_some_and(|e| e == "json") {
            text_path.with_extension("json.txt")
        } else {
            let mut p = text_path.clone().into_os_string();
            p.push(".json");
            PathBuf::from(p)
        };
        let (text_path, json_path) = if text_path.extension().is_some_and(|e| e == "json") {
            (json_path, text_path)
        } else {
            (text_path, json_path)
        };
        if let Some(dir) = text_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&text_path, self.to_text()).map_err(|e| Error::io(&text_path, e))?;
        std::fs::write(&json_path, self.to_json()).map_err(|e| Error::io(&json_path, e))?;
        Ok((text_path, json_path))
    }
}
