//! Per-sample loss terms and their derivatives.

use super::MappoError;

/// Clipped surrogate `-min(rho * A, clip(rho, 1-eps, 1+eps) * A)` with
/// `rho = exp(new - old)`.
pub fn ppo_policy_loss(new_logprob: f64, old_logprob: f64, advantage: f64, clip_eps: f64) -> Result<f64, MappoError> {
    Ok(policy_term(new_logprob, old_logprob, advantage, clip_eps)?.loss)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PolicyTerm {
    pub loss: f64,
    /// d loss / d new_logprob
    pub dlogprob: f64,
    pub clipped: bool,
}

pub(crate) fn policy_term(new_logprob: f64, old_logprob: f64, advantage: f64, clip_eps: f64) -> Result<PolicyTerm, MappoError> {
    let ratio = (new_logprob - old_logprob).exp();
    if !ratio.is_finite() || !advantage.is_finite() {
        return Err(MappoError::NonFinite(format!(
            "policy ratio {ratio} (new {new_logprob}, old {old_logprob}), advantage {advantage}"
        )));
    }
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    let (loss, dlogprob) = if unclipped <= clipped {
        (-unclipped, -unclipped)
    } else {
        (-clipped, 0.0)
    };
    Ok(PolicyTerm {
        loss,
        dlogprob,
        clipped: (ratio - 1.0).abs() > clip_eps,
    })
}

pub fn huber(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

fn huber_grad(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

/// Clipped value loss: the larger of the Huber errors of the raw prediction
/// and of the prediction clipped to within `clip_eps` of `old_value`.
pub fn value_loss(value: f64, old_value: f64, target: f64, clip_eps: f64, huber_delta: f64) -> f64 {
    value_term(value, old_value, target, clip_eps, huber_delta).0
}

/// `(loss, d loss / d value)`
pub(crate) fn value_term(value: f64, old_value: f64, target: f64, clip_eps: f64, huber_delta: f64) -> (f64, f64) {
    let step = value - old_value;
    let clipped_value = old_value + step.clamp(-clip_eps, clip_eps);
    let raw = huber(value - target, huber_delta);
    let clip = huber(clipped_value - target, huber_delta);
    if raw >= clip {
        (raw, huber_grad(value - target, huber_delta))
    } else {
        let passes = if step.abs() < clip_eps { 1.0 } else { 0.0 };
        (clip, passes * huber_grad(clipped_value - target, huber_delta))
    }
}

/// Log-softmax of one row of logits.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Shannon entropy of a categorical given its log-probabilities.
pub(crate) fn entropy(logp: &[f64]) -> f64 {
    -logp.iter().map(|l| l.exp() * l).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_ratio() {
        assert_eq!(ppo_policy_loss(-0.3, -0.3, 1.7, 0.2).unwrap(), -1.7);
    }

    #[test]
    fn upper_clip() {
        let loss = ppo_policy_loss(1.5f64.ln(), 0.0, 2.0, 0.2).unwrap();
        assert!((loss + 2.4).abs() < 1e-12);
        let t = policy_term(1.5f64.ln(), 0.0, 2.0, 0.2).unwrap();
        assert_eq!(t.dlogprob, 0.0);
        assert!(t.clipped);
    }

    #[test]
    fn lower_clip() {
        // min(-0.5, -0.8) = -0.8, loss 0.8; the unclipped branch is inactive
        let loss = ppo_policy_loss(0.5f64.ln(), 0.0, -1.0, 0.2).unwrap();
        assert!((loss - 0.8).abs() < 1e-12);
        assert_eq!(policy_term(0.5f64.ln(), 0.0, -1.0, 0.2).unwrap().dlogprob, 0.0);
    }

    #[test]
    fn pessimistic_branch_keeps_gradient() {
        // rho = 0.5 with positive advantage: the unclipped term is the minimum
        let t = policy_term(0.5f64.ln(), 0.0, 2.0, 0.2).unwrap();
        assert!((t.loss + 1.0).abs() < 1e-12);
        assert!((t.dlogprob + 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_ratio_errors() {
        assert!(ppo_policy_loss(800.0, 0.0, 1.0, 0.2).is_err());
        assert!(ppo_policy_loss(0.0, 0.0, f64::NAN, 0.2).is_err());
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(1.0, 10.0), 0.5);
        assert_eq!(huber(20.0, 10.0), 150.0);
        assert_eq!(huber(-20.0, 10.0), 150.0);
    }

    #[test]
    fn value_loss_cases() {
        assert_eq!(value_loss(1.0, 1.0, 1.0, 0.2, 10.0), 0.0);
        // max(huber(2), huber(0.2)) = max(2.0, 0.02)
        let oracle = f64::max(0.5 * 2.0 * 2.0, 0.5 * 0.2 * 0.2);
        assert_eq!(oracle, 2.0);
        assert_eq!(value_loss(2.0, 0.0, 0.0, 0.2, 10.0), oracle);
    }

    #[test]
    fn clipped_value_branch_blocks_gradient_outside_the_trust_region() {
        // V moved 1.0 away from old toward the target: the clipped prediction is worse
        let (loss, grad) = value_term(1.0, 0.0, 1.0, 0.2, 10.0);
        assert!((loss - 0.5 * 0.8 * 0.8).abs() < 1e-12);
        assert_eq!(grad, 0.0);
    }

    #[test]
    fn softmax_helpers() {
        let lp = log_softmax(&[0.0, 0.0, 0.0, 0.0]);
        assert!(lp.iter().all(|l| (l + 4f64.ln()).abs() < 1e-12));
        assert!((entropy(&lp) - 4f64.ln()).abs() < 1e-12);
        let lp = log_softmax(&[1000.0, 0.0]);
        assert!(lp[0].abs() < 1e-12 && lp[1].is_finite());
    }
}
