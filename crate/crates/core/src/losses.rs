//! Segmentation training losses with analytic gradients.
//!
//! The training objective is cross-entropy plus a weighted soft Dice term,
//! evaluated on a per-voxel class probability field against an integer
//! label map. Gradients are taken with respect to the raw probabilities,
//! coordinate by coordinate, so they can be checked against finite
//! differences without worrying about simplex projection.

use thiserror::Error;

use crate::geom::LabelVolume;

/// Probabilities below this are clamped before the log in cross-entropy.
pub const CE_CLAMP: f64 = 1e-12;

/// Default smoothing constant for the soft Dice denominator and numerator.
pub const DEFAULT_DICE_SMOOTH: f64 = 1e-5;

/// Default weight of the Dice term in the composite loss.
pub const DEFAULT_DICE_WEIGHT: f64 = 1.0;

/// How far per-voxel probability sums may stray from one.
pub const PROB_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("probability values length {got} does not match {voxels} voxels x {classes} classes")]
    BadLength {
        got: usize,
        voxels: usize,
        classes: usize,
    },
    #[error("negative probability {value} at voxel {voxel}, class {class}")]
    NegativeProbability {
        voxel: usize,
        class: usize,
        value: f64,
    },
    #[error("probabilities at voxel {voxel} sum to {sum}, not 1")]
    NotNormalized { voxel: usize, sum: f64 },
    #[error("probability field is over {got:?} voxels but labels are over {expected:?}")]
    ShapeMismatch {
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
    #[error("label {label} needs class index below {classes}")]
    LabelOutOfRange { label: u8, classes: usize },
}

/// A per-voxel categorical distribution over `classes` labels.
///
/// Values are stored voxel-major: the probabilities of voxel `v` occupy
/// `values[v * classes .. (v + 1) * classes]`, with the voxel order matching
/// [`LabelVolume`]'s linear layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    dims: (usize, usize, usize),
    classes: usize,
    values: Vec<f64>,
}

impl ProbField {
    /// Validates non-negativity and per-voxel normalization.
    pub fn new(
        dims: (usize, usize, usize),
        classes: usize,
        values: Vec<f64>,
    ) -> Result<Self, LossError> {
        let voxels = dims.0 * dims.1 * dims.2;
        if values.len() != voxels * classes {
            return Err(LossError::BadLength {
                got: values.len(),
                voxels,
                classes,
            });
        }
        for voxel in 0..voxels {
            let mut sum = 0.0;
            for class in 0..classes {
                let value = values[voxel * classes + class];
                if value < 0.0 {
                    return Err(LossError::NegativeProbability {
                        voxel,
                        class,
                        value,
                    });
                }
                sum += value;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(LossError::NotNormalized { voxel, sum });
            }
        }
        Ok(Self {
            dims,
            classes,
            values,
        })
    }

    /// Skips validation. Needed when probing the loss surface off the
    /// simplex, e.g. for finite-difference gradient checks.
    pub fn new_unchecked(dims: (usize, usize, usize), classes: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.0 * dims.1 * dims.2 * classes);
        Self {
            dims,
            classes,
            values,
        }
    }

    /// One-hot field matching a label map exactly.
    pub fn one_hot(labels: &LabelVolume, classes: usize) -> Result<Self, LossError> {
        let dims = labels.grid().dims();
        let voxels = labels.data().len();
        let mut values = vec![0.0; voxels * classes];
        for (v, &label) in labels.data().iter().enumerate() {
            if label as usize >= classes {
                return Err(LossError::LabelOutOfRange { label, classes });
            }
            values[v * classes + label as usize] = 1.0;
        }
        Ok(Self {
            dims,
            classes,
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn voxels(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    fn check_against(&self, labels: &LabelVolume) -> Result<(), LossError> {
        if labels.grid().dims() != self.dims {
            return Err(LossError::ShapeMismatch {
                got: self.dims,
                expected: labels.grid().dims(),
            });
        }
        if let Some(&label) = labels.data().iter().find(|&&l| (l as usize) >= self.classes) {
            return Err(LossError::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of the true class, with the probability
/// clamped to `[1e-12, 1]` before the log.
///
/// Returns the loss and its gradient with respect to every probability
/// entry (zero for non-true classes, since the loss never reads them).
pub fn cross_entropy(p: &ProbField, y: &LabelVolume) -> Result<(f64, Vec<f64>), LossError> {
    p.check_against(y)?;
    let n = p.voxels() as f64;
    let k = p.classes;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.values.len()];
    for (v, &label) in y.data().iter().enumerate() {
        let idx = v * k + label as usize;
        let clamped = p.values[idx].clamp(CE_CLAMP, 1.0);
        loss -= clamped.ln();
        grad[idx] = -1.0 / (n * clamped);
    }
    Ok((loss / n, grad))
}

/// Soft Dice loss averaged over foreground classes `1..classes`.
///
/// Per class the Dice term is
/// `(2 * sum(p * y) + smooth) / (sum(p) + sum(y) + smooth)`; a class with an
/// all-zero denominator counts as perfectly matched. The loss is one minus
/// the mean term. The gradient treats every probability entry as a free
/// coordinate.
pub fn soft_dice_loss(
    p: &ProbField,
    y: &LabelVolume,
    smooth: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    p.check_against(y)?;
    let k = p.classes;
    let voxels = p.voxels();
    let foreground = k - 1;
    let mut grad = vec![0.0; p.values.len()];
    let mut term_sum = 0.0;
    for class in 1..k {
        let mut intersection = 0.0;
        let mut p_mass = 0.0;
        let mut y_mass = 0.0;
        for v in 0..voxels {
            let pv = p.values[v * k + class];
            p_mass += pv;
            if y.data()[v] as usize == class {
                intersection += pv;
                y_mass += 1.0;
            }
        }
        let numerator = 2.0 * intersection + smooth;
        let denominator = p_mass + y_mass + smooth;
        if denominator == 0.0 {
            // nothing predicted, nothing expected: a perfect match with a
            // flat gradient
            term_sum += 1.0;
            continue;
        }
        term_sum += numerator / denominator;
        let d2 = denominator * denominator;
        for v in 0..voxels {
            let y_here = (y.data()[v] as usize == class) as u8 as f64;
            // d/dp of N/D with N and D both linear in p
            grad[v * k + class] -= (2.0 * y_here * denominator - numerator) / d2 / foreground as f64;
        }
    }
    let loss = 1.0 - term_sum / foreground as f64;
    Ok((loss, grad))
}

/// Cross-entropy plus `dice_weight` times the soft Dice loss, with the
/// default smoothing.
pub fn composite_seg_loss(
    p: &ProbField,
    y: &LabelVolume,
    dice_weight: f64,
) -> Result<f64, LossError> {
    let (ce, _) = cross_entropy(p, y)?;
    let (dice, _) = soft_dice_loss(p, y, DEFAULT_DICE_SMOOTH)?;
    Ok(ce + dice_weight * dice)
}
