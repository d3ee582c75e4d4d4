//! Incremental categorical naive Bayes with Laplace smoothing.
//!
//! Missing feature values contribute no likelihood factor, and prediction
//! only consults the features the caller selects.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayes {
    class_counts: Vec<f64>,
    /// Per feature, row-major `r x s_f` counts.
    cond_counts: Vec<Vec<f64>>,
    /// Per feature, per class: number of observed values.
    cond_totals: Vec<Vec<f64>>,
    cardinalities: Vec<usize>,
    smoothing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub posterior: Vec<f64>,
    /// Argmax of the posterior; ties go to the lower class index.
    pub label: usize,
}

impl NaiveBayes {
    pub const DEFAULT_SMOOTHING: f64 = 1.0;

    pub fn new(classes: usize, cardinalities: Vec<usize>, smoothing: f64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("naive Bayes needs at least one class".into()));
        }
        if !(smoothing >= 0.0) || !smoothing.is_finite() {
            return Err(Error::InvalidArgument(format!("smoothing {smoothing} must be >= 0")));
        }
        Ok(Self {
            class_counts: vec![0.0; classes],
            cond_counts: cardinalities.iter().map(|&s| vec![0.0; classes * s]).collect(),
            cond_totals: cardinalities.iter().map(|_| vec![0.0; classes]).collect(),
            cardinalities,
            smoothing,
        })
    }

    /// Batch construction from labeled instances.
    pub fn fit<'a, I>(classes: usize, cardinalities: Vec<usize>, smoothing: f64, data: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [Option<usize>], usize)>,
    {
        let mut model = Self::new(classes, cardinalities, smoothing)?;
        for (features, class) in data {
            model.update(features, class)?;
        }
        Ok(model)
    }

    pub fn classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn class_counts(&self) -> &[f64] {
        &self.class_counts
    }

    /// Row-major `r x s_f` counts of feature `f`.
    pub fn cond_counts(&self, feature: usize) -> &[f64] {
        &self.cond_counts[feature]
    }

    pub fn training_size(&self) -> f64 {
        self.class_counts.iter().sum()
    }

    fn check_instance(&self, features: &[Option<usize>]) -> Result<()> {
        if features.len() != self.cardinalities.len() {
            return Err(Error::InvalidArgument(format!(
                "instance has {} features, model has {}",
                features.len(),
                self.cardinalities.len()
            )));
        }
        for (value, &card) in features.iter().zip(&self.cardinalities) {
            if let Some(v) = *value {
                if v >= card {
                    return Err(Error::CategoryOutOfRange {
                        what: "feature value",
                        index: v,
                        bound: card,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn update(&mut self, features: &[Option<usize>], class: usize) -> Result<()> {
        if class >= self.classes() {
            return Err(Error::CategoryOutOfRange {
                what: "class",
                index: class,
                bound: self.classes(),
            });
        }
        self.check_instance(features)?;
        self.class_counts[class] += 1.0;
        for (f, value) in features.iter().enumerate() {
            if let Some(v) = *value {
                self.cond_counts[f][class * self.cardinalities[f] + v] += 1.0;
                self.cond_totals[f][class] += 1.0;
            }
        }
        Ok(())
    }

    /// Class posterior using only the `selected` features that are observed.
    pub fn predict(&self, features: &[Option<usize>], selected: &[usize]) -> Result<Prediction> {
        self.check_instance(features)?;
        let a = self.smoothing;
        let r = self.classes() as f64;
        let total = self.training_size();
        if total + r * a <= 0.0 {
            return Err(Error::InvalidArgument(
                "cannot predict from an empty model without smoothing".into(),
            ));
        }
        let mut log_post: Vec<f64> = self
            .class_counts
            .iter()
            .map(|&c| ((c + a) / (total + r * a)).ln())
            .collect();
        for &f in selected {
            let Some(value) = *features.get(f).ok_or(Error::CategoryOutOfRange {
                what: "selected feature",
                index: f,
                bound: features.len(),
            })?
            else {
                continue;
            };
            let card = self.cardinalities[f];
            for (c, lp) in log_post.iter_mut().enumerate() {
                let num = self.cond_counts[f][c * card + value] + a;
                let den = self.cond_totals[f][c] + card as f64 * a;
                *lp += if den > 0.0 { (num / den).ln() } else { 0.0 };
            }
        }
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut posterior: Vec<f64> = log_post.iter().map(|lp| (lp - max).exp()).collect();
        let z: f64 = posterior.iter().sum();
        for p in &mut posterior {
            *p /= z;
        }
        let label = posterior
            .iter()
            .enumerate()
            .fold(0, |best, (c, &p)| if p > posterior[best] { c } else { best });
        Ok(Prediction { posterior, label })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_update_records_instance() {
        let mut m = NaiveBayes::new(2, vec![3, 2], 1.0).unwrap();
        m.update(&[Some(2), Some(0)], 1).unwrap();
        assert_eq!(m.class_counts(), &[0.0, 1.0]);
        assert_eq!(m.cond_counts(0), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.cond_counts(1), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn all_missing_instance_only_moves_class_count() {
        let mut m = NaiveBayes::new(2, vec![3, 2], 1.0).unwrap();
        m.update(&[None, None], 0).unwrap();
        assert_eq!(m.class_counts(), &[1.0, 0.0]);
        assert!(m.cond_counts(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_category_is_rejected() {
        let mut m = NaiveBayes::new(2, vec![3], 1.0).unwrap();
        assert!(m.update(&[Some(3)], 0).is_err());
        assert!(m.update(&[Some(0)], 2).is_err());
        assert!(m.update(&[Some(0), None], 0).is_err());
    }

    #[test]
    fn incremental_equals_batch_in_any_order() {
        let data: Vec<(Vec<Option<usize>>, usize)> = vec![
            (vec![Some(0), Some(1)], 0),
            (vec![None, Some(0)], 1),
            (vec![Some(2), None], 1),
        ];
        let forward = NaiveBayes::fit(2, vec![3, 2], 1.0, data.iter().map(|(f, c)| (f.as_slice(), *c))).unwrap();
        let backward = NaiveBayes::fit(2, vec![3, 2], 1.0, data.iter().rev().map(|(f, c)| (f.as_slice(), *c))).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn no_selected_features_gives_smoothed_prior() {
        let mut m = NaiveBayes::new(2, vec![2], 1.0).unwrap();
        for _ in 0..3 {
            m.update(&[Some(0)], 0).unwrap();
        }
        let p = m.predict(&[Some(1)], &[]).unwrap();
        assert!((p.posterior[0] - 4.0 / 5.0).abs() < 1e-15);
        assert_eq!(p.label, 0);
    }

    #[test]
    fn perfectly_predictive_feature() {
        let mut m = NaiveBayes::new(2, vec![2], 1.0).unwrap();
        for _ in 0..5 {
            m.update(&[Some(0)], 0).unwrap();
            m.update(&[Some(1)], 1).unwrap();
        }
        assert_eq!(m.predict(&[Some(0)], &[0]).unwrap().label, 0);
        assert_eq!(m.predict(&[Some(1)], &[0]).unwrap().label, 1);
    }

    #[test]
    fn longhand_two_class_two_feature_posterior() {
        // class counts [2, 1]; feature 0 (2 values), feature 1 (3 values)
        let mut m = NaiveBayes::new(2, vec![2, 3], 1.0).unwrap();
        m.update(&[Some(0), Some(2)], 0).unwrap();
        m.update(&[Some(0), None], 0).unwrap();
        m.update(&[Some(1), Some(2)], 1).unwrap();
        let p = m.predict(&[Some(0), Some(2)], &[0, 1]).unwrap();
        // class 0: (3/5) * (3/4) * (2/4); class 1: (2/5) * (1/3) * (2/4)
        let a = 0.6 * 0.75 * 0.5;
        let b = 0.4 * (1.0 / 3.0) * 0.5;
        assert!((p.posterior[0] - a / (a + b)).abs() < 1e-15);
        assert!((p.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // missing value in a selected feature adds no factor
        let q = m.predict(&[Some(0), None], &[0, 1]).unwrap();
        let a = 0.6 * 0.75;
        let b = 0.4 * (1.0 / 3.0);
        assert!((q.posterior[0] - a / (a + b)).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lower_class() {
        let m = NaiveBayes::new(3, vec![2], 1.0).unwrap();
        assert_eq!(m.predict(&[Some(0)], &[0]).unwrap().label, 0);
    }

    #[test]
    fn empty_model_without_smoothing_fails() {
        let m = NaiveBayes::new(2, vec![2], 0.0).unwrap();
        assert!(m.predict(&[Some(0)], &[0]).is_err());
    }
}
