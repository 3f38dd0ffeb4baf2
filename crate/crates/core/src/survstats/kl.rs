use super::SurvError;
use crate::numcore::Var;

/// Probabilities are clamped to `[KL_CLAMP, 1 - KL_CLAMP]`.
pub const KL_CLAMP: f64 = 1e-7;

fn prob(logit: f64) -> f64 {
    let p = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    p.clamp(KL_CLAMP, 1.0 - KL_CLAMP)
}

/// `KL(Bernoulli(σ(y_s)) ‖ Bernoulli(σ(y_t)))` evaluated without a tape.
pub fn bernoulli_kl(y_student: f64, y_teacher: f64) -> f64 {
    let (p, q) = (prob(y_student), prob(y_teacher));
    p * (p.ln() - q.ln()) + (1.0 - p) * ((1.0 - p).ln() - (1.0 - q).ln())
}

/// Distillation loss on one scalar student score against a fixed teacher
/// score. The teacher enters as a constant, so gradients reach only the
/// student.
pub fn kl_loss<'t>(y_student: Var<'t>, y_teacher: f64) -> Result<Var<'t>, SurvError> {
    let ys = y_student.value();
    if !ys.is_scalar() {
        return Err(SurvError::LengthMismatch(ys.len(), 1));
    }
    if !ys.item().is_finite() {
        return Err(SurvError::NonFiniteScore(0));
    }
    if !y_teacher.is_finite() {
        return Err(SurvError::NonFiniteScore(1));
    }
    let q = prob(y_teacher);
    let p = y_student.sigmoid()?.clamp(KL_CLAMP, 1.0 - KL_CLAMP)?;
    let not_p = p.scale(-1.0)?.add_const(1.0)?;
    let pos = p.mul(p.ln()?.add_const(-q.ln())?)?;
    let neg = not_p.mul(not_p.ln()?.add_const(-(1.0 - q).ln())?)?;
    Ok(pos.add(neg)?)
}
