use serde::{Deserialize, Serialize};

use super::{PairInput, RerankGradient, RerankModel, SoftLabelSet};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// Argument order of the distillation divergence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// D_KL(student ‖ teacher).
    #[default]
    StudentTeacher,
    /// D_KL(teacher ‖ student).
    TeacherStudent,
}

/// Divergence between the student softmax over `pairs` and the teacher
/// distribution in `labels`, with gradients for every reranker parameter.
pub fn kl_loss(
    model: &RerankModel,
    pairs: &[PairInput],
    labels: &SoftLabelSet,
    direction: KlDirection,
) -> Result<(f64, RerankGradient)> {
    labels.validate()?;
    if pairs.len() != labels.teacher_probs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} pairs but {} teacher probabilities",
            pairs.len(),
            labels.teacher_probs.len()
        )));
    }
    let forwards: Vec<_> = pairs.iter().map(|p| model.forward(p)).collect();
    let logits: Vec<f64> = forwards.iter().map(|f| f.score).collect();
    let lse = log_sum_exp(&logits);
    let log_s: Vec<f64> = logits.iter().map(|z| z - lse).collect();
    let s: Vec<f64> = log_s.iter().map(|l| l.exp()).collect();
    let log_t: Vec<f64> = labels.teacher_probs.iter().map(|t| t.ln()).collect();

    let (loss, d_logits): (f64, Vec<f64>) = match direction {
        KlDirection::StudentTeacher => {
            let gaps: Vec<f64> = log_s.iter().zip(&log_t).map(|(ls, lt)| ls - lt).collect();
            let loss: f64 = s.iter().zip(&gaps).map(|(si, g)| si * g).sum();
            let d = s.iter().zip(&gaps).map(|(si, g)| si * (g - loss)).collect();
            (loss, d)
        }
        KlDirection::TeacherStudent => {
            let t = &labels.teacher_probs;
            let loss: f64 = t.iter().zip(log_t.iter().zip(&log_s)).map(|(ti, (lt, ls))| ti * (lt - ls)).sum();
            let d = s.iter().zip(t).map(|(si, ti)| si - ti).collect();
            (loss, d)
        }
    };

    let mut grad = RerankGradient::zeros(model);
    for ((pair, fw), d) in pairs.iter().zip(&forwards).zip(d_logits) {
        model.backward(pair, fw, d, &mut grad);
    }
    Ok((loss, grad))
}

/// Hard-label loss: −ln softmax(positive | {positive} ∪ negatives).
pub fn ce_loss(model: &RerankModel, positive: &PairInput, negatives: &[PairInput]) -> Result<(f64, RerankGradient)> {
    if negatives.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy needs at least one negative".into()));
    }
    let pairs: Vec<&PairInput> = std::iter::once(positive).chain(negatives).collect();
    let forwards: Vec<_> = pairs.iter().map(|p| model.forward(p)).collect();
    let logits: Vec<f64> = forwards.iter().map(|f| f.score).collect();
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[0];
    let mut grad = RerankGradient::zeros(model);
    for (i, (pair, fw)) in pairs.iter().zip(&forwards).enumerate() {
        let mut d = (logits[i] - lse).exp();
        if i == 0 {
            d -= 1.0;
        }
        model.backward(pair, fw, d, &mut grad);
    }
    Ok((loss, grad))
}
