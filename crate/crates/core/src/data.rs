//! Labelled `side x side x 2` frames with a class-name table.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("sample shape {actual} does not match dataset shape {expected}")]
    Shape { expected: Shape, actual: Shape },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("test fraction must be in (0, 1), got {0}")]
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    side: usize,
    classes: Vec<String>,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(side: usize, classes: Vec<String>) -> Self {
        Dataset {
            side,
            classes,
            samples: Vec::new(),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.side, self.side, 2)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample) -> Result<(), DataError> {
        if sample.label >= self.classes.len() {
            return Err(DataError::Label {
                label: sample.label,
                classes: self.classes.len(),
            });
        }
        if sample.x.shape() != self.shape() {
            return Err(DataError::Shape {
                expected: self.shape(),
                actual: sample.x.shape(),
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Number of samples carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Keeps only the named classes, relabelled in the order given.
    pub fn filter_classes<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset, DataError> {
        let mut map = alloc::vec![None; self.classes.len()];
        for (new, name) in names.iter().enumerate() {
            let old = self
                .classes
                .iter()
                .position(|c| c == name.as_ref())
                .ok_or_else(|| DataError::UnknownClass(name.as_ref().into()))?;
            map[old] = Some(new);
        }
        Ok(Dataset {
            side: self.side,
            classes: names.iter().map(|n| n.as_ref().into()).collect(),
            samples: self
                .samples
                .iter()
                .filter_map(|s| {
                    map[s.label].map(|label| Sample {
                        x: s.x.clone(),
                        label,
                    })
                })
                .collect(),
        })
    }

    /// Seeded stratified split into `(train, test)`; every sample lands in
    /// exactly one side.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(DataError::Fraction(test_fraction));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Dataset::new(self.side, self.classes.clone());
        let mut test = Dataset::new(self.side, self.classes.clone());
        for class in 0..self.classes.len() {
            let mut idx: Vec<usize> = (0..self.samples.len())
                .filter(|&i| self.samples[i].label == class)
                .collect();
            idx.shuffle(&mut rng);
            let n_test = libm::round(idx.len() as f64 * test_fraction) as usize;
            for (k, &i) in idx.iter().enumerate() {
                let dst = if k < n_test { &mut test } else { &mut train };
                dst.samples.push(self.samples[i].clone());
            }
        }
        Ok((train, test))
    }

    /// Appends another dataset with the same geometry and class table.
    pub fn extend(&mut self, other: Dataset) -> Result<(), DataError> {
        for s in other.samples {
            self.push(s)?;
        }
        Ok(())
    }

    pub fn shuffle(&mut self, seed: u64) {
        self.samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy() -> Dataset {
        let mut d = Dataset::new(1, vec!["a".into(), "b".into(), "c".into()]);
        for i in 0..30 {
            d.push(Sample {
                x: Tensor::from_vec(Shape::new(1, 1, 2), vec![i as f32, 0.0]).unwrap(),
                label: i % 3,
            })
            .unwrap();
        }
        d
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let d = toy();
        let (tr, te) = d.split(0.2, 7).unwrap();
        assert_eq!(tr.len() + te.len(), 30);
        assert_eq!(te.class_counts(), vec![2, 2, 2]);
        let mut ids: Vec<i32> = tr
            .samples()
            .iter()
            .chain(te.samples())
            .map(|s| s.x.data()[0] as i32)
            .collect();
        ids.sort();
        assert_eq!(ids, (0..30).collect::<Vec<_>>());
        assert_eq!(d.split(0.2, 7).unwrap(), (tr, te));
    }

    #[test]
    fn filter_relabels() {
        let d = toy().filter_classes(&["c", "a"]).unwrap();
        assert_eq!(d.classes(), &["c", "a"]);
        assert_eq!(d.class_counts(), vec![10, 10]);
        assert!(d
            .samples()
            .iter()
            .all(|s| (s.label == 0) == (s.x.data()[0] as i32 % 3 == 2)));
        assert!(toy().filter_classes(&["z"]).is_err());
    }

    #[test]
    fn push_validates() {
        let mut d = toy();
        let x = Tensor::zeros(Shape::new(1, 1, 2));
        assert!(d
            .push(Sample {
                x: x.clone(),
                label: 3
            })
            .is_err());
        let bad = Tensor::zeros(Shape::new(2, 1, 2));
        assert!(d.push(Sample { x: bad, label: 0 }).is_err());
    }
}
