use super::MappoError;

/// Generalized advantage estimation over one trajectory segment.
///
/// `bootstrap_value` is `V(s_T)` for the state after the last step; it is
/// ignored when the last step is terminal. Returns `(advantages, returns)`
/// with `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), MappoError> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(MappoError::Contract(format!(
            "gae: {} rewards, {} values, {} dones",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_adv = adv[t];
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

pub const ADV_STD_FLOOR: f64 = 1e-8;

/// Shifts and scales a batch to zero mean and unit (population) standard
/// deviation. A single-element batch is returned unchanged with the flag set.
pub fn normalize_advantages(adv: &[f64]) -> (Vec<f64>, bool) {
    if adv.len() < 2 {
        return (adv.to_vec(), true);
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(ADV_STD_FLOOR);
    (adv.iter().map(|a| (a - mean) / std).collect(), false)
}
