//! SFT and mDPO objectives over tabular softmax policies, with analytic
//! gradients and a finite-difference checker.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StageRng;

/// Softmax policy with one logit row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoricalPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl CategoricalPolicy {
    pub fn new(logits: Vec<Vec<f64>>) -> Result<Self> {
        let width = logits.first().map(Vec::len).unwrap_or(0);
        if width == 0 || logits.iter().any(|r| r.len() != width) {
            return Err(Error::Precondition(
                "policy rows must be non-empty and of equal width".into(),
            ));
        }
        if logits.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Precondition("policy logits must be finite".into()));
        }
        Ok(CategoricalPolicy { logits })
    }

    pub fn uniform(states: usize, actions: usize) -> Self {
        CategoricalPolicy {
            logits: vec![vec![0.0; actions]; states],
        }
    }

    pub fn states(&self) -> usize {
        self.logits.len()
    }

    pub fn actions(&self) -> usize {
        self.logits.first().map(Vec::len).unwrap_or(0)
    }

    fn row(&self, s: usize) -> Result<&[f64]> {
        self.logits
            .get(s)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Precondition(format!("unknown state {s}")))
    }

    pub fn probs(&self, s: usize) -> Result<Vec<f64>> {
        let row = self.row(s)?;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / z).collect())
    }

    pub fn log_prob(&self, s: usize, a: usize) -> Result<f64> {
        let row = self.row(s)?;
        if a >= row.len() {
            return Err(Error::Precondition(format!("unknown action {a} in state {s}")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok(row[a] - lse)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Self {
        let w = self.actions();
        CategoricalPolicy {
            logits: flat.chunks(w).map(<[f64]>::to_vec).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedTrajectory {
    /// `(state, action)` per step.
    pub steps: Vec<(usize, usize)>,
    /// True for model-action steps.
    pub mask: Vec<bool>,
}

impl TokenizedTrajectory {
    pub fn new(steps: Vec<(usize, usize)>, mask: Vec<bool>) -> Result<Self> {
        let t = TokenizedTrajectory { steps, mask };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<()> {
        if self.steps.len() != self.mask.len() {
            return Err(Error::Precondition("mask length differs from step count".into()));
        }
        if !self.mask.iter().any(|m| *m) {
            return Err(Error::Precondition("trajectory has no masked step".into()));
        }
        Ok(())
    }

    pub fn masked(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(s, _)| *s)
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MdpoForm {
    /// `-log σ(η(Σ_w log r - Σ_l log r))`
    #[default]
    LogRatio,
    /// `-log σ(η(Σ_l r - Σ_w r))` with `r = π_θ / π_ref`
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub eta: f64,
    #[serde(default)]
    pub form: MdpoForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            eta: 1.0,
            form: MdpoForm::LogRatio,
        }
    }
}

impl LossConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.eta > 0.0) {
            return Err(Error::Config(format!(
                "need lambda >= 0 and eta > 0, got {} and {}",
                self.lambda, self.eta
            )));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood of the masked actions.
pub fn sft_loss(policy: &CategoricalPolicy, traj: &TokenizedTrajectory) -> Result<f64> {
    traj.check()?;
    let mut total = 0.0;
    for (s, a) in traj.masked() {
        total -= policy.log_prob(s, a)?;
    }
    Ok(total / traj.masked_count() as f64)
}

fn sum_log_ratio(theta: &CategoricalPolicy, reference: &CategoricalPolicy, t: &TokenizedTrajectory) -> Result<f64> {
    let mut sum = 0.0;
    for (s, a) in t.masked() {
        sum += theta.log_prob(s, a)? - reference.log_prob(s, a)?;
    }
    Ok(sum)
}

fn sum_ratio(theta: &CategoricalPolicy, reference: &CategoricalPolicy, t: &TokenizedTrajectory) -> Result<f64> {
    let mut sum = 0.0;
    for (s, a) in t.masked() {
        sum += (theta.log_prob(s, a)? - reference.log_prob(s, a)?).exp();
    }
    Ok(sum)
}

fn mdpo_margin(
    theta: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    chosen: &TokenizedTrajectory,
    rejected: &TokenizedTrajectory,
    cfg: &LossConfig,
) -> Result<f64> {
    chosen.check()?;
    rejected.check()?;
    Ok(match cfg.form {
        MdpoForm::LogRatio => {
            cfg.eta * (sum_log_ratio(theta, reference, chosen)? - sum_log_ratio(theta, reference, rejected)?)
        }
        MdpoForm::AsPrinted => {
            cfg.eta * (sum_ratio(theta, reference, rejected)? - sum_ratio(theta, reference, chosen)?)
        }
    })
}

/// `-log σ(z)` with the margin `z` of the configured form.
pub fn mdpo_loss(
    theta: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    chosen: &TokenizedTrajectory,
    rejected: &TokenizedTrajectory,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.check()?;
    Ok(softplus(-mdpo_margin(theta, reference, chosen, rejected, cfg)?))
}

pub fn combined_loss(
    theta: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    chosen: &TokenizedTrajectory,
    rejected: &TokenizedTrajectory,
    cfg: &LossConfig,
) -> Result<f64> {
    let sft = sft_loss(theta, chosen)?;
    if cfg.lambda == 0.0 {
        cfg.check()?;
        return Ok(sft);
    }
    Ok(sft + cfg.lambda * mdpo_loss(theta, reference, chosen, rejected, cfg)?)
}

/// Add `weight * d log π(a|s) / d logits` into `grad`.
fn add_dlogp(grad: &mut [f64], probs: &[f64], s: usize, a: usize, weight: f64) {
    let w = probs.len();
    for (j, p) in probs.iter().enumerate() {
        let indicator = if j == a { 1.0 } else { 0.0 };
        grad[s * w + j] += weight * (indicator - p);
    }
}

/// Analytic gradient of [`combined_loss`] with respect to all of θ's logits,
/// flattened row-major.
pub fn grad_combined(
    theta: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    chosen: &TokenizedTrajectory,
    rejected: &TokenizedTrajectory,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    cfg.check()?;
    chosen.check()?;
    let mut grad = vec![0.0; theta.states() * theta.actions()];
    let m = chosen.masked_count() as f64;
    for (s, a) in chosen.masked() {
        theta.log_prob(s, a)?;
        add_dlogp(&mut grad, &theta.probs(s)?, s, a, -1.0 / m);
    }
    if cfg.lambda == 0.0 {
        return Ok(grad);
    }
    let z = mdpo_margin(theta, reference, chosen, rejected, cfg)?;
    // d softplus(-z) / dz
    let outer = -cfg.lambda * sigmoid(-z);
    match cfg.form {
        MdpoForm::LogRatio => {
            for (s, a) in chosen.masked() {
                add_dlogp(&mut grad, &theta.probs(s)?, s, a, outer * cfg.eta);
            }
            for (s, a) in rejected.masked() {
                add_dlogp(&mut grad, &theta.probs(s)?, s, a, -outer * cfg.eta);
            }
        }
        MdpoForm::AsPrinted => {
            for (s, a) in rejected.masked() {
                let r = (theta.log_prob(s, a)? - reference.log_prob(s, a)?).exp();
                add_dlogp(&mut grad, &theta.probs(s)?, s, a, outer * cfg.eta * r);
            }
            for (s, a) in chosen.masked() {
                let r = (theta.log_prob(s, a)? - reference.log_prob(s, a)?).exp();
                add_dlogp(&mut grad, &theta.probs(s)?, s, a, -outer * cfg.eta * r);
            }
        }
    }
    Ok(grad)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe)?;
        probe[i] = orig - step;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − f‖ / max(‖a‖ + ‖f‖, 1e-12)`
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = norm(analytic.iter().zip(numeric).map(|(a, f)| a - f));
    let scale = norm(analytic.iter().copied()) + norm(numeric.iter().copied());
    diff / scale.max(1e-12)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub chosen: TokenizedTrajectory,
    pub rejected: TokenizedTrajectory,
}

/// Toy-instance file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyInstance {
    pub states: Vec<String>,
    pub vocab: Vec<String>,
    pub theta_logits: Vec<Vec<f64>>,
    pub ref_logits: Vec<Vec<f64>>,
    pub pairs: Vec<PreferencePair>,
}

impl ToyInstance {
    pub fn policies(&self) -> Result<(CategoricalPolicy, CategoricalPolicy)> {
        let theta = CategoricalPolicy::new(self.theta_logits.clone())?;
        let reference = CategoricalPolicy::new(self.ref_logits.clone())?;
        if theta.states() != self.states.len() || theta.actions() != self.vocab.len() {
            return Err(Error::Precondition("theta logits do not match states × vocab".into()));
        }
        if reference.states() != theta.states() || reference.actions() != theta.actions() {
            return Err(Error::Precondition("reference logits do not match theta".into()));
        }
        Ok((theta, reference))
    }

    pub fn random(rng: &mut StageRng, states: usize, actions: usize, pairs: usize) -> Self {
        let logits = |rng: &mut StageRng| -> Vec<Vec<f64>> {
            (0..states)
                .map(|_| (0..actions).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect()
        };
        let theta_logits = logits(rng);
        let ref_logits = logits(rng);
        let traj = |rng: &mut StageRng| -> TokenizedTrajectory {
            let len = rng.random_range(2..6);
            let steps: Vec<(usize, usize)> = (0..len)
                .map(|_| (rng.random_range(0..states), rng.random_range(0..actions)))
                .collect();
            let mut mask: Vec<bool> = (0..len).map(|_| rng.random_bool(0.6)).collect();
            mask[len - 1] = true;
            TokenizedTrajectory { steps, mask }
        };
        let pairs = (0..pairs)
            .map(|_| PreferencePair {
                chosen: traj(rng),
                rejected: traj(rng),
            })
            .collect();
        ToyInstance {
            states: (0..states).map(|i| format!("s{i}")).collect(),
            vocab: (0..actions).map(|i| format!("a{i}")).collect(),
            theta_logits,
            ref_logits,
            pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub sft: f64,
    pub mdpo_log_ratio: f64,
    pub mdpo_as_printed: f64,
    pub combined: f64,
    pub fd_relative_error: f64,
}

/// Evaluate every pair of a toy instance and check its gradient.
pub fn check_toy(toy: &ToyInstance, cfg: &LossConfig, step: f64) -> Result<Vec<PairReport>> {
    let (theta, reference) = toy.policies()?;
    toy.pairs
        .iter()
        .map(|p| {
            let log_cfg = LossConfig {
                form: MdpoForm::LogRatio,
                ..*cfg
            };
            let printed_cfg = LossConfig {
                form: MdpoForm::AsPrinted,
                ..*cfg
            };
            let analytic = grad_combined(&theta, &reference, &p.chosen, &p.rejected, cfg)?;
            let numeric = fd_gradient(
                |x| combined_loss(&theta.from_flat(x), &reference, &p.chosen, &p.rejected, cfg),
                &theta.flat(),
                step,
            )?;
            Ok(PairReport {
                sft: sft_loss(&theta, &p.chosen)?,
                mdpo_log_ratio: mdpo_loss(&theta, &reference, &p.chosen, &p.rejected, &log_cfg)?,
                mdpo_as_printed: mdpo_loss(&theta, &reference, &p.chosen, &p.rejected, &printed_cfg)?,
                combined: combined_loss(&theta, &reference, &p.chosen, &p.rejected, cfg)?,
                fd_relative_error: relative_error(&analytic, &numeric),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_sft_is_ln_actions() {
        let p = CategoricalPolicy::uniform(2, 4);
        let t = TokenizedTrajectory::new(vec![(0, 1), (1, 2), (0, 3), (1, 0)], vec![true, true, false, true]).unwrap();
        assert!((sft_loss(&p, &t).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn bad_inputs() {
        let p = CategoricalPolicy::uniform(1, 2);
        let t = TokenizedTrajectory {
            steps: vec![(3, 0)],
            mask: vec![true],
        };
        assert!(sft_loss(&p, &t).is_err());
        assert!(TokenizedTrajectory::new(vec![(0, 0)], vec![false]).is_err());
        assert!(LossConfig {
            lambda: 1.0,
            eta: 0.0,
            form: MdpoForm::LogRatio
        }
        .check()
        .is_err());
    }
}
