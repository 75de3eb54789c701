//! The KnitCity decision process: per-step stay/leave actions over an event
//! stream, social and human costs, reward accounting, the (η, κ) policy
//! scores, and the reference policies.

use crate::error::{Error, Result};
use crate::predictor::Predictions;
use crate::signal::{ClassThresholds, EventSeries};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Largest prediction history an agent may request; episodes carry this many
/// pre-episode predictions so any k ≤ 32 has a full state at step 0.
pub const PREDICTION_PREFIX: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stay,
    Leave,
}

/// Per-day social cost of an evacuated city (λ, fixed 1) and the human-cost
/// damage scale μ. Damage per true event class is μ·[0, 0, 0, 1, 10].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub lambda_social: f64,
    pub mu: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { lambda_social: 1.0, mu: 20.0 }
    }
}

impl CostModel {
    pub fn with_mu(mu: f64) -> Self {
        Self { lambda_social: 1.0, mu }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::config("mu must be positive and finite"));
        }
        if !(self.lambda_social > 0.0) || !self.lambda_social.is_finite() {
            return Err(Error::config("lambda_social must be positive and finite"));
        }
        Ok(())
    }

    pub fn damage_weights(&self) -> [f64; 5] {
        [0.0, 0.0, 0.0, self.mu, 10.0 * self.mu]
    }

    pub fn damage_of_class(&self, class: usize) -> f64 {
        let w = self.damage_weights();
        w[class.min(4)]
    }
}

/// Prediction window attached to an episode: `classes[prefix + i]` is the
/// prediction made at local step i, and the `prefix` earlier entries give
/// agents their pre-episode history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodePredictions {
    pub prefix: usize,
    pub n_classes: usize,
    pub classes: Vec<u8>,
    pub probabilities: Vec<Vec<f64>>,
}

impl EpisodePredictions {
    pub fn class_at(&self, local_step: usize) -> u8 {
        self.classes[self.prefix + local_step]
    }

    /// Classes of the k most recent predictions at a local step, oldest first.
    pub fn history(&self, local_step: usize, k: usize) -> &[u8] {
        let end = self.prefix + local_step + 1;
        &self.classes[end - k..end]
    }

    pub fn probabilities_history(&self, local_step: usize, k: usize) -> &[Vec<f64>] {
        let end = self.prefix + local_step + 1;
        &self.probabilities[end - k..end]
    }
}

/// A contiguous slice of the stream with true five-class event labels and,
/// optionally, an aligned forecaster prediction window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    /// Global stream index of local step 0.
    pub start_t: usize,
    pub classes: Vec<u8>,
    pub predictions: Option<EpisodePredictions>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class4_count(&self) -> usize {
        self.classes.iter().filter(|&&c| c == 4).count()
    }

    pub fn max_casualties(&self, cost: &CostModel) -> f64 {
        self.classes.iter().map(|&c| cost.damage_of_class(c as usize)).sum()
    }
}

/// Sequential stepping state for one episode.
#[derive(Debug)]
pub struct EpisodeState<'a> {
    episode: &'a Episode,
    cost: CostModel,
    cursor: usize,
}

impl<'a> EpisodeState<'a> {
    pub fn new(episode: &'a Episode, cost: &CostModel) -> Self {
        Self { episode, cost: cost.clone(), cursor: 0 }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_finished(&self) -> bool {
        self.cursor >= self.episode.len()
    }

    /// Advances one step and returns the (social, human) cost pair: s is −λ
    /// on leave and 0 on stay; h is −damage(event class) on stay and 0 on
    /// leave.
    pub fn step(&mut self, action: Action) -> Result<(f64, f64)> {
        if self.is_finished() {
            return Err(Error::protocol("cannot step a finished episode"));
        }
        let class = self.episode.classes[self.cursor] as usize;
        let (s, h) = match action {
            Action::Leave => (-self.cost.lambda_social, 0.0),
            Action::Stay => (0.0, -self.cost.damage_of_class(class)),
        };
        self.cursor += 1;
        Ok((s, h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: Action,
    pub class: u8,
    pub social: f64,
    pub human: f64,
}

/// Full per-step record of one played episode plus the cost totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode_id: usize,
    pub steps: Vec<TraceStep>,
    pub total_reward: f64,
    pub casualties: f64,
    pub evacuated_steps: usize,
    pub max_casualties: f64,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn stats(&self) -> EpisodeStats {
        EpisodeStats { length: self.len(), max_casualties: self.max_casualties }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,action,class,s,h")?;
        for (t, s) in self.steps.iter().enumerate() {
            let a = match s.action {
                Action::Stay => "stay",
                Action::Leave => "leave",
            };
            writeln!(w, "{t},{a},{},{},{}", s.class, s.social, s.human)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub length: usize,
    pub max_casualties: f64,
}

/// Life-saving rate η, population-retention rate κ, and reward per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub eta: f64,
    pub kappa: f64,
    pub reward_per_step: f64,
}

/// Plays one episode with a per-step decision rule, accumulating costs
/// through the one true accounting path ([`EpisodeState::step`]).
pub fn rollout(
    episode: &Episode,
    cost: &CostModel,
    mut decide: impl FnMut(&Episode, usize) -> Action,
) -> EpisodeTrace {
    let mut state = EpisodeState::new(episode, cost);
    let mut steps = Vec::with_capacity(episode.len());
    let mut total = 0.0f64;
    let mut casualties = 0.0f64;
    let mut evacuated = 0usize;
    for t in 0..episode.len() {
        let action = decide(episode, t);
        let (s, h) = state.step(action).expect("cursor in range");
        total += s + h;
        casualties -= h;
        evacuated += matches!(action, Action::Leave) as usize;
        steps.push(TraceStep { action, class: episode.classes[t], social: s, human: h });
    }
    EpisodeTrace {
        episode_id: episode.id,
        steps,
        total_reward: total,
        casualties,
        evacuated_steps: evacuated,
        max_casualties: episode.max_casualties(cost),
    }
}

/// Scores a completed trace. η is defined against the always-stay worst case
/// of the same episode; an episode with no damage at all scores η = 1.
pub fn score(trace: &EpisodeTrace) -> PolicyScore {
    let len = trace.len().max(1) as f64;
    let eta = if trace.max_casualties > 0.0 { 1.0 - trace.casualties / trace.max_casualties } else { 1.0 };
    PolicyScore {
        eta,
        kappa: 1.0 - trace.evacuated_steps as f64 / len,
        reward_per_step: trace.total_reward / len,
    }
}

pub fn always_stay(episode: &Episode, cost: &CostModel) -> EpisodeTrace {
    rollout(episode, cost, |_, _| Action::Stay)
}

pub fn always_leave(episode: &Episode, cost: &CostModel) -> EpisodeTrace {
    rollout(episode, cost, |_, _| Action::Leave)
}

/// Evacuates independently at rate p each step.
pub fn random_policy(episode: &Episode, cost: &CostModel, p: f64, seed: u64) -> EpisodeTrace {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rollout(episode, cost, |_, _| if rng.random::<f64>() < p { Action::Leave } else { Action::Stay })
}

/// Full-foresight reference: leave exactly when the step's actual damage
/// exceeds the social cost.
pub fn oracle_policy(episode: &Episode, cost: &CostModel) -> EpisodeTrace {
    rollout(episode, cost, |ep, t| {
        if cost.damage_of_class(ep.classes[t] as usize) > cost.lambda_social {
            Action::Leave
        } else {
            Action::Stay
        }
    })
}

/// Evacuates whenever the damage of the latest predicted class exceeds the
/// social cost (predicted class indexes the damage vector directly).
pub fn naive_policy(episode: &Episode, cost: &CostModel) -> Result<EpisodeTrace> {
    let preds = episode
        .predictions
        .as_ref()
        .ok_or_else(|| Error::protocol("naive policy requires episode predictions"))?;
    let weights = cost.damage_weights();
    Ok(rollout(episode, cost, |_, t| {
        if weights[preds.class_at(t) as usize] > cost.lambda_social {
            Action::Leave
        } else {
            Action::Stay
        }
    }))
}

/// Exact affine relation between reward per step and the (κ, η) scores:
/// `r = c0 + c1·κ + c2·η` with c0 = −(1 + D̄), c1 = 1, c2 = D̄, where D̄ is
/// the per-step damage density of the episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineReward {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub damage_density: f64,
}

impl AffineReward {
    pub fn reward(&self, kappa: f64, eta: f64) -> f64 {
        self.c0 + self.c1 * kappa + self.c2 * eta
    }
}

/// Derives the affine reward relation from scored traces and verifies every
/// score satisfies it exactly. All episodes must share the same per-step
/// damage density.
pub fn reward_geometry(items: &[(PolicyScore, EpisodeStats)]) -> Result<AffineReward> {
    if items.is_empty() {
        return Err(Error::geometry("no scores supplied"));
    }
    let density = |st: &EpisodeStats| st.max_casualties / st.length.max(1) as f64;
    let d0 = density(&items[0].1);
    for (_, st) in items {
        let d = density(st);
        if (d - d0).abs() > 1e-9 * d0.abs().max(1.0) {
            return Err(Error::geometry(format!(
                "episode statistics differ: damage density {d} vs {d0}"
            )));
        }
    }
    let affine = AffineReward { c0: -(1.0 + d0), c1: 1.0, c2: d0, damage_density: d0 };
    for (sc, _) in items {
        let want = affine.reward(sc.kappa, sc.eta);
        if (sc.reward_per_step - want).abs() > 1e-9 * sc.reward_per_step.abs().max(1.0) {
            return Err(Error::geometry(format!(
                "score (η={}, κ={}, r={}) violates the affine identity (expected r={want})",
                sc.eta, sc.kappa, sc.reward_per_step
            )));
        }
    }
    Ok(affine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodePlan {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub length: usize,
    /// Desired mean class-4 events per episode.
    pub class4_target: f64,
}

impl Default for EpisodePlan {
    fn default() -> Self {
        Self { n_train: 75, n_valid: 50, n_test: 180, length: 5000, class4_target: 2.0 }
    }
}

impl EpisodePlan {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::config("episode length must be positive"));
        }
        if self.n_train + self.n_valid + self.n_test == 0 {
            return Err(Error::config("episode plan requests zero episodes"));
        }
        if !(self.class4_target >= 0.0) {
            return Err(Error::config("class4_target must be nonnegative"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_valid + self.n_test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSet {
    pub train: Vec<Episode>,
    pub valid: Vec<Episode>,
    pub test: Vec<Episode>,
    pub plan: EpisodePlan,
}

impl EpisodeSet {
    pub fn split(&self, name: &str) -> Result<&[Episode]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::config(format!("unknown episode split '{other}'"))),
        }
    }

    pub fn class4_mean(episodes: &[Episode]) -> f64 {
        if episodes.is_empty() {
            return 0.0;
        }
        episodes.iter().map(|e| e.class4_count() as f64).sum::<f64>() / episodes.len() as f64
    }
}

/// Cuts the stream into disjoint consecutive windows and selects disjoint
/// train/valid/test episodes whose per-split mean class-4 count approaches
/// the plan target. Deterministic for a fixed seed.
pub fn make_episodes(
    events: &EventSeries,
    predictions: Option<&Predictions>,
    thresholds: &ClassThresholds,
    plan: &EpisodePlan,
    seed: u64,
) -> Result<EpisodeSet> {
    plan.validate()?;
    if thresholds.n_classes() != 5 {
        return Err(Error::config("episodes require five-class thresholds for true damage labels"));
    }
    let classes: Vec<u8> = events.delta_f.iter().map(|&d| thresholds.class_of(d) as u8).collect();

    let (usable_start, usable_end) = match predictions {
        Some(p) => (p.start_t + PREDICTION_PREFIX, p.start_t + p.len()),
        None => (0, events.len()),
    };
    if usable_end <= usable_start {
        return Err(Error::data("prediction stream leaves no usable episode range"));
    }
    let n_windows = (usable_end - usable_start) / plan.length;
    if n_windows < plan.total() {
        return Err(Error::data(format!(
            "stream provides {n_windows} disjoint windows of length {}, plan needs {}",
            plan.length,
            plan.total()
        )));
    }

    let mut pool: Vec<(usize, usize)> = (0..n_windows)
        .map(|w| {
            let start = usable_start + w * plan.length;
            let c4 = classes[start..start + plan.length].iter().filter(|&&c| c == 4).count();
            (start, c4)
        })
        .collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);

    let mut next_id = 0usize;
    let mut take_split = |pool: &mut Vec<(usize, usize)>, count: usize| -> Vec<Episode> {
        let mut picked = Vec::with_capacity(count);
        let mut c4_sum = 0.0f64;
        for k in 0..count {
            // among the next few shuffled candidates, keep the running mean
            // closest to the target
            let lookahead = pool.len().min(8);
            let mut best = 0usize;
            let mut best_err = f64::INFINITY;
            for (j, cand) in pool[..lookahead].iter().enumerate() {
                let err = ((c4_sum + cand.1 as f64) / (k + 1) as f64 - plan.class4_target).abs();
                if err < best_err {
                    best_err = err;
                    best = j;
                }
            }
            let (start, c4) = pool.remove(best);
            c4_sum += c4 as f64;
            picked.push(start);
        }
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|start| {
                let id = next_id;
                next_id += 1;
                let ep_preds = predictions.map(|p| {
                    let lo = start - PREDICTION_PREFIX - p.start_t;
                    let hi = start + plan.length - p.start_t;
                    EpisodePredictions {
                        prefix: PREDICTION_PREFIX,
                        n_classes: p.n_classes,
                        classes: p.classes[lo..hi].to_vec(),
                        probabilities: p.probabilities[lo..hi].to_vec(),
                    }
                });
                Episode {
                    id,
                    start_t: start,
                    classes: classes[start..start + plan.length].to_vec(),
                    predictions: ep_preds,
                }
            })
            .collect()
    };

    let train = take_split(&mut pool, plan.n_train);
    let valid = take_split(&mut pool, plan.n_valid);
    let test = take_split(&mut pool, plan.n_test);
    Ok(EpisodeSet { train, valid, test, plan: plan.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{fit_class_thresholds, synthesize, GeneratorConfig};

    fn damaging_episode() -> Episode {
        let mut classes = vec![0u8; 500];
        classes[50] = 3;
        classes[200] = 4;
        classes[201] = 2;
        classes[400] = 3;
        Episode { id: 0, start_t: 0, classes, predictions: None }
    }

    #[test]
    fn step_cost_pairs_match_the_cost_equations() {
        let cost = CostModel::default();
        let mut classes = vec![0u8; 3];
        classes[1] = 3;
        classes[2] = 4;
        let ep = Episode { id: 0, start_t: 0, classes, predictions: None };
        let mut st = EpisodeState::new(&ep, &cost);
        assert_eq!(st.step(Action::Leave).unwrap(), (-1.0, 0.0));
        assert_eq!(st.step(Action::Stay).unwrap(), (0.0, -20.0));
        assert_eq!(st.step(Action::Stay).unwrap(), (0.0, -200.0));
        assert_eq!(st.step(Action::Stay).unwrap_err().kind, crate::error::ErrorKind::Protocol);
    }

    #[test]
    fn extreme_policies_hit_the_anchor_coordinates() {
        let cost = CostModel::default();
        let ep = damaging_episode();
        let stay = score(&always_stay(&ep, &cost));
        assert_eq!((stay.eta, stay.kappa), (0.0, 1.0));
        let leave = score(&always_leave(&ep, &cost));
        assert_eq!((leave.eta, leave.kappa), (1.0, 0.0));
        assert_eq!(leave.reward_per_step, -1.0);
    }

    #[test]
    fn random_policies_average_onto_the_anti_diagonal() {
        let cost = CostModel::default();
        let ep = damaging_episode();
        let mut devs = Vec::new();
        for i in 0..50 {
            let p = 0.05 + 0.9 * (i as f64 / 49.0);
            let sc = score(&random_policy(&ep, &cost, p, 1000 + i as u64));
            devs.push(sc.eta + sc.kappa - 1.0);
        }
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let var = devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (devs.len() - 1) as f64;
        let se = (var / devs.len() as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se.max(1e-12), "mean deviation {mean} vs 3се {}", 3.0 * se);
    }

    #[test]
    fn accounting_identity_holds_for_random_action_sequences() {
        let cost = CostModel::with_mu(7.5);
        let ep = damaging_episode();
        for seed in 0..20 {
            let tr = random_policy(&ep, &cost, 0.3, seed);
            let sc = score(&tr);
            let t = tr.len() as f64;
            let identity = -(1.0 - sc.kappa) * t - (1.0 - sc.eta) * tr.max_casualties;
            assert!(
                (tr.total_reward - identity).abs() <= 1e-9 * tr.total_reward.abs().max(1.0),
                "seed {seed}: R={} identity={identity}",
                tr.total_reward
            );
        }
    }

    #[test]
    fn oracle_saves_everyone_and_rarely_evacuates() {
        let cost = CostModel::default();
        let ep = damaging_episode();
        let sc = score(&oracle_policy(&ep, &cost));
        assert_eq!(sc.eta, 1.0);
        // 3 damaging steps out of 500
        assert!((sc.kappa - (1.0 - 3.0 / 500.0)).abs() < 1e-12);
    }

    #[test]
    fn oracle_never_leaves_without_damage() {
        let cost = CostModel::default();
        let ep = Episode { id: 1, start_t: 0, classes: vec![0; 100], predictions: None };
        let sc = score(&oracle_policy(&ep, &cost));
        assert_eq!((sc.eta, sc.kappa), (1.0, 1.0));
        // μ so small that no damage exceeds λ
        let tiny = CostModel::with_mu(0.05);
        let ep = damaging_episode();
        let sc = score(&oracle_policy(&ep, &tiny));
        assert_eq!(sc.kappa, 1.0);
    }

    #[test]
    fn naive_policy_follows_predictions() {
        let cost = CostModel::default();
        let mut ep = damaging_episode();
        assert_eq!(naive_policy(&ep, &cost).unwrap_err().kind, crate::error::ErrorKind::Protocol);

        // all-noise predictions: identical to always-stay
        let n = ep.len();
        ep.predictions = Some(EpisodePredictions {
            prefix: 0,
            n_classes: 5,
            classes: vec![0; n],
            probabilities: vec![vec![1.0, 0.0, 0.0, 0.0, 0.0]; n],
        });
        let sc = score(&naive_policy(&ep, &cost).unwrap());
        assert_eq!((sc.eta, sc.kappa), (0.0, 1.0));

        // class-2 predictions carry zero damage weight: still stay
        ep.predictions = Some(EpisodePredictions {
            prefix: 0,
            n_classes: 5,
            classes: vec![2; n],
            probabilities: vec![vec![0.0, 0.0, 1.0, 0.0, 0.0]; n],
        });
        let sc = score(&naive_policy(&ep, &cost).unwrap());
        assert_eq!(sc.kappa, 1.0);

        // perfect per-step class predictions reproduce the oracle trace
        ep.predictions = Some(EpisodePredictions {
            prefix: 0,
            n_classes: 5,
            classes: ep.classes.clone(),
            probabilities: ep.classes.iter().map(|&c| {
                let mut p = vec![0.0; 5];
                p[c as usize] = 1.0;
                p
            }).collect(),
        });
        let naive = naive_policy(&ep, &cost).unwrap();
        let oracle = oracle_policy(&ep, &cost);
        assert_eq!(naive, oracle);
    }

    #[test]
    fn mu_limits_flip_the_constant_policy_ordering() {
        let ep = damaging_episode();
        let tiny = CostModel::with_mu(0.001);
        let huge = CostModel::with_mu(1e6);
        assert!(
            score(&always_stay(&ep, &tiny)).reward_per_step
                > score(&always_leave(&ep, &tiny)).reward_per_step
        );
        assert!(
            score(&always_leave(&ep, &huge)).reward_per_step
                > score(&always_stay(&ep, &huge)).reward_per_step
        );
    }

    #[test]
    fn eta_kappa_invariant_under_common_cost_rescaling() {
        let ep = damaging_episode();
        let a = CostModel { lambda_social: 1.0, mu: 20.0 };
        let b = CostModel { lambda_social: 10.0, mu: 200.0 };
        for policy in [oracle_policy, always_stay, always_leave] {
            let sa = score(&policy(&ep, &a));
            let sb = score(&policy(&ep, &b));
            assert_eq!((sa.eta, sa.kappa), (sb.eta, sb.kappa));
        }
    }

    #[test]
    fn reward_geometry_matches_constant_policies() {
        let cost = CostModel::default();
        let ep = damaging_episode();
        let traces = [
            always_stay(&ep, &cost),
            always_leave(&ep, &cost),
            oracle_policy(&ep, &cost),
            random_policy(&ep, &cost, 0.4, 9),
        ];
        let items: Vec<(PolicyScore, EpisodeStats)> =
            traces.iter().map(|t| (score(t), t.stats())).collect();
        let affine = reward_geometry(&items).unwrap();
        let dbar = affine.damage_density;
        assert!((items[0].0.reward_per_step - (-dbar)).abs() < 1e-12, "always-stay r = -D̄");
        assert_eq!(items[1].0.reward_per_step, -1.0, "always-leave r = -1");
        let oracle = items[2].0;
        assert!((oracle.reward_per_step - (oracle.kappa - 1.0)).abs() < 1e-12, "oracle r = κ-1");
    }

    #[test]
    fn reward_geometry_rejects_mixed_statistics() {
        let cost = CostModel::default();
        let a = damaging_episode();
        let b = Episode { id: 2, start_t: 0, classes: vec![0; 500], predictions: None };
        let items = vec![
            (score(&always_stay(&a, &cost)), always_stay(&a, &cost).stats()),
            (score(&always_stay(&b, &cost)), always_stay(&b, &cost).stats()),
        ];
        assert_eq!(reward_geometry(&items).unwrap_err().kind, crate::error::ErrorKind::Geometry);
    }

    #[test]
    fn episodes_are_disjoint_deterministic_and_class4_calibrated() {
        let ev = synthesize(&GeneratorConfig::default(), 400_000).unwrap();
        let th = fit_class_thresholds(&ev, 5).unwrap();
        let plan = EpisodePlan { n_train: 6, n_valid: 3, n_test: 12, length: 5000, class4_target: 2.0 };
        let a = make_episodes(&ev, None, &th, &plan, 42).unwrap();
        let b = make_episodes(&ev, None, &th, &plan, 42).unwrap();
        assert_eq!(a, b, "same seed, same episodes");

        let mut spans: Vec<(usize, usize)> = a
            .train
            .iter()
            .chain(&a.valid)
            .chain(&a.test)
            .map(|e| (e.start_t, e.start_t + e.len()))
            .collect();
        spans.sort();
        for w in spans.windows(2) {
            assert!(w[0].1 <= w[1].0, "episodes overlap: {:?}", w);
        }
        for split in [&a.train, &a.valid, &a.test] {
            let mean = EpisodeSet::class4_mean(split);
            assert!((1.0..=3.0).contains(&mean), "class-4 mean {mean}");
        }
    }

    #[test]
    fn make_episodes_rejects_short_streams() {
        let ev = synthesize(&GeneratorConfig::default(), 20_000).unwrap();
        let th = fit_class_thresholds(&synthesize(&GeneratorConfig::default(), 200_000).unwrap(), 5).unwrap();
        let plan = EpisodePlan { n_train: 10, n_valid: 5, n_test: 10, length: 5000, class4_target: 2.0 };
        assert_eq!(
            make_episodes(&ev, None, &th, &plan, 0).unwrap_err().kind,
            crate::error::ErrorKind::Data
        );
    }
}
