//! Top-1 evaluation of a checkpoint against a labeled split, either
//! through the prototype bank or through live class-template embeddings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoders::EncoderParams;
use crate::error::{LatteError, Result};
use crate::prototypes::PrototypeBank;
use crate::pseudo::{class_text_embeddings, finetune_label, finetune_label_templates};

/// How predictions are scored.
#[derive(Debug, Clone, Copy)]
pub enum Classifier<'a> {
    /// argmax cosine against the prototype bank (latteclip checkpoints).
    Prototypes(&'a PrototypeBank),
    /// argmax cosine against live "a photo of a {class}." embeddings
    /// (flyp_pl / oracle checkpoints, and zero-shot baselines).
    Templates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split: String,
    pub mode: String,
    pub top1: f64,
    /// Per-class accuracy; `None` for classes absent from the split.
    pub per_class_top1: Vec<Option<f64>>,
    pub n: usize,
    pub checkpoint_id: Option<String>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Predicts every sample and scores against ground truth.
pub fn evaluate(
    dataset: &Dataset,
    live: &EncoderParams,
    classifier: Classifier<'_>,
    checkpoint_id: Option<String>,
) -> Result<EvalReport> {
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(LatteError::Config("cannot evaluate an empty split".into()));
    }
    let num_classes = dataset.num_classes();
    if let Classifier::Prototypes(bank) = classifier {
        if bank.num_classes() != num_classes {
            return Err(LatteError::DimensionMismatch {
                what: "prototype bank class count".into(),
                expected: num_classes,
                got: bank.num_classes(),
            });
        }
    }
    let templates = match classifier {
        Classifier::Templates => Some(class_text_embeddings(live, &dataset.class_names)?),
        Classifier::Prototypes(_) => None,
    };
    let mut correct = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    for s in &dataset.samples {
        let gt = s.gt_label.ok_or_else(|| {
            LatteError::Config(format!("sample `{}` has no ground-truth label", s.image_id))
        })?;
        let pred = match classifier {
            Classifier::Prototypes(bank) => finetune_label(live, bank, &s.features, &s.image_id)?,
            Classifier::Templates => finetune_label_templates(
                live,
                templates.as_ref().unwrap(),
                &s.features,
                &s.image_id,
            )?,
        };
        total[gt] += 1;
        if pred == gt {
            correct[gt] += 1;
        }
    }
    let n = dataset.len();
    let top1 = correct.iter().sum::<usize>() as f64 / n as f64;
    let per_class_top1 = correct
        .iter()
        .zip(total.iter())
        .map(|(&c, &t)| if t == 0 { None } else { Some(c as f64 / t as f64) })
        .collect();
    Ok(EvalReport {
        dataset: dataset.name.clone(),
        split: dataset.split.to_string(),
        mode: match classifier {
            Classifier::Prototypes(_) => "prototypes".into(),
            Classifier::Templates => "templates".into(),
        },
        top1,
        per_class_top1,
        n,
        checkpoint_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, Split};
    use crate::encoders::{default_logit_scale, encode_text, snapshot};
    use crate::captions::render_class_text;
    use crate::math::{l2_normalize, Embedding, Matrix};
    use crate::prototypes::PrototypeBank;

    /// Identity image encoder over R^3, text rows chosen so each class
    /// template lands near a distinct axis.
    fn axis_fixture() -> (EncoderParams, Vec<String>) {
        let names: Vec<String> = vec!["oak".into(), "fern".into(), "moss".into()];
        let image_weights = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let mut text_weights = Matrix::zeros(64, 3);
        for (c, n) in names.iter().enumerate() {
            let feat = crate::encoders::featurize_text(n, 64).unwrap();
            let bucket = feat.counts[0].0;
            *text_weights.at_mut(bucket, c) = 5.0;
        }
        let params = EncoderParams::new(image_weights, text_weights, default_logit_scale()).unwrap();
        (params, names)
    }

    fn axis_dataset(names: &[String], labels: &[usize]) -> Dataset {
        let samples: Vec<Sample> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let mut x = vec![0.05; 3];
                x[l] = 1.0;
                Sample {
                    image_id: format!("t{i}"),
                    features: x,
                    gt_label: Some(l),
                }
            })
            .collect();
        Dataset::new("axis", "plant", names.to_vec(), Split::Test, samples).unwrap()
    }

    #[test]
    fn perfect_axis_classifier_scores_one() {
        let (params, names) = axis_fixture();
        let ds = axis_dataset(&names, &[0, 1, 2, 0, 1]);
        let report = evaluate(&ds, &params, Classifier::Templates, None).unwrap();
        assert_eq!(report.top1, 1.0);
        assert_eq!(report.n, 5);
        assert_eq!(report.per_class_top1, vec![Some(1.0), Some(1.0), Some(1.0)]);
    }

    #[test]
    fn prototypes_from_templates_agree_with_templates() {
        let (params, names) = axis_fixture();
        let bank = PrototypeBank::init_from_class_texts(&params, &names, 0.99, 0.99).unwrap();
        let ds = axis_dataset(&names, &[2, 0, 1, 1]);
        let a = evaluate(&ds, &params, Classifier::Templates, None).unwrap();
        let b = evaluate(&ds, &params, Classifier::Prototypes(&bank), None).unwrap();
        assert_eq!(a.top1, b.top1);
        assert_eq!(a.per_class_top1, b.per_class_top1);
        assert_eq!(b.mode, "prototypes");
    }

    #[test]
    fn per_class_counts_match_hand_tally() {
        let (params, names) = axis_fixture();
        // mislabel one oak sample as fern on purpose
        let mut ds = axis_dataset(&names, &[0, 0, 1]);
        ds.samples[1].gt_label = Some(1);
        let report = evaluate(&ds, &params, Classifier::Templates, None).unwrap();
        // class 0: 1/1 right; class 1: sample1 predicted 0 (features say oak),
        // sample2 predicted 1 -> 1/2; class 2 absent
        assert_eq!(report.per_class_top1[0], Some(1.0));
        assert_eq!(report.per_class_top1[1], Some(0.5));
        assert_eq!(report.per_class_top1[2], None);
        assert!((report.top1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn prototype_drift_changes_predictions() {
        let (params, names) = axis_fixture();
        let mut bank = PrototypeBank::init_from_class_texts(&params, &names, 0.0, 0.99).unwrap();
        // swap prototypes for classes 0 and 1
        bank.vectors.swap(0, 1);
        let ds = axis_dataset(&names, &[0, 1]);
        let report = evaluate(&ds, &params, Classifier::Prototypes(&bank), None).unwrap();
        assert_eq!(report.top1, 0.0);
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let (params, names) = axis_fixture();
        let bank = PrototypeBank::init_from_class_texts(
            &params,
            &["oak".to_string(), "fern".to_string()],
            0.99,
            0.99,
        )
        .unwrap();
        let ds = axis_dataset(&names, &[0, 1]);
        assert!(evaluate(&ds, &params, Classifier::Prototypes(&bank), None).is_err());
    }

    #[test]
    fn templates_use_live_not_frozen_parameters() {
        let (params, names) = axis_fixture();
        let frozen = snapshot(&params, 0);
        let mut live = params.clone();
        // rotate the live text encoder so oak/fern templates swap axes
        let oak = crate::encoders::featurize_text("oak", 64).unwrap().counts[0].0;
        let fern = crate::encoders::featurize_text("fern", 64).unwrap().counts[0].0;
        for c in 0..3 {
            let a = live.text_weights.at(oak, c);
            let b = live.text_weights.at(fern, c);
            *live.text_weights.at_mut(oak, c) = b;
            *live.text_weights.at_mut(fern, c) = a;
        }
        let ds = axis_dataset(&names, &[0, 1]);
        let live_report = evaluate(&ds, &live, Classifier::Templates, None).unwrap();
        let frozen_report = evaluate(&ds, frozen.params(), Classifier::Templates, None).unwrap();
        assert_eq!(frozen_report.top1, 1.0);
        assert_eq!(live_report.top1, 0.0);
        // sanity: the swap really moved the template embeddings
        let e_live = encode_text(&live, &render_class_text("oak")).unwrap();
        let e_frozen = encode_text(frozen.params(), &render_class_text("oak")).unwrap();
        assert_ne!(
            l2_normalize(&e_live).unwrap(),
            l2_normalize(&Embedding(e_frozen.0)).unwrap()
        );
    }

    #[test]
    fn report_round_trip() {
        let (params, names) = axis_fixture();
        let ds = axis_dataset(&names, &[0, 1, 2]);
        let report = evaluate(&ds, &params, Classifier::Templates, Some("ckpt-3".into())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.json");
        report.save(&path).unwrap();
        assert_eq!(EvalReport::load(&path).unwrap(), report);
    }

    #[test]
    fn missing_gt_is_error() {
        let (params, names) = axis_fixture();
        let samples = vec![Sample {
            image_id: "x".into(),
            features: vec![1.0, 0.0, 0.0],
            gt_label: Some(0),
        }];
        let mut ds = Dataset::new("axis", "plant", names, Split::Train, samples).unwrap();
        ds.samples[0].gt_label = None;
        assert!(evaluate(&ds, &params, Classifier::Templates, None).is_err());
    }
}
