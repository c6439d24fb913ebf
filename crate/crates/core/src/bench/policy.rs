//! Goal embeddings, the goal-conditioned behaviour-cloning policy, and
//! rollout evaluation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::grid::{expert_trajectory, Action, Cell, GridTask, TaskSet, Trajectory};
use crate::collapse::CollapseTransform;
use crate::contrastive::{
    encoder_forward, frame_difference_embedding, EncoderInput, EncoderParams,
};
use crate::corrupt::Noise;
use crate::embedding::{l2_norm, Embedding, EmbeddingBank, Modality};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, ParamSet, Sgd};
use crate::rng::{domain, substream, Rng};

/// What a goal embedding is computed from.
#[derive(Debug, Clone, Copy)]
pub enum GoalSource<'a> {
    /// Visual goal: first and last frame of a demonstration.
    Demo(&'a Trajectory),
    /// Text goal: a tokenized instruction.
    Tokens(&'a [usize]),
}

impl GoalSource<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            GoalSource::Demo(_) => Modality::Visual,
            GoalSource::Tokens(_) => Modality::Text,
        }
    }
}

/// Encoders plus an optional collapse transform. `visual_offset` is added to
/// every raw visual embedding and is used to plant an artificial gap.
#[derive(Debug, Clone, Copy)]
pub struct GoalEncoder<'a> {
    pub encoders: &'a EncoderParams,
    pub transform: Option<&'a CollapseTransform>,
    pub visual_offset: Option<&'a [f64]>,
}

impl<'a> GoalEncoder<'a> {
    pub fn new(encoders: &'a EncoderParams, transform: Option<&'a CollapseTransform>) -> Self {
        Self {
            encoders,
            transform,
            visual_offset: None,
        }
    }

    /// Encoder output before collapse.
    pub fn raw(&self, source: GoalSource<'_>) -> Result<Embedding> {
        match source {
            GoalSource::Demo(t) => {
                if !t.has_transition() {
                    return Err(Error::DegenerateVector(
                        "visual goal of a zero-length demonstration".into(),
                    ));
                }
                let e = frame_difference_embedding(
                    self.encoders,
                    t.first_observation(),
                    t.last_observation(),
                )?;
                match self.visual_offset {
                    None => Ok(e),
                    Some(off) => {
                        let v = e.values().iter().zip(off).map(|(a, b)| a + b).collect();
                        Embedding::new(v, Modality::Visual)
                    }
                }
            }
            GoalSource::Tokens(tokens) => {
                encoder_forward(self.encoders, EncoderInput::Tokens(tokens))
            }
        }
    }

    pub fn embed(&self, source: GoalSource<'_>) -> Result<Embedding> {
        let raw = self.raw(source)?;
        match self.transform {
            None => Ok(raw),
            Some(t) => t.apply(&raw),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.transform
            .map_or(self.encoders.dim(), |t| t.output_dim())
    }
}

/// Collapsed goal embedding of a demonstration (visual) or an instruction (text).
pub fn goal_embedding(
    params: &EncoderParams,
    transform: Option<&CollapseTransform>,
    source: GoalSource<'_>,
    modality: Modality,
) -> Result<Embedding> {
    if source.modality() != modality {
        return Err(Error::Parameter(format!(
            "{modality} goal requested from a {} source",
            source.modality()
        )));
    }
    GoalEncoder::new(params, transform).embed(source)
}

/// Raw reference banks: one visual row per demonstration with a transition,
/// one text row per seen instruction of every task.
pub fn reference_banks(
    tasks: &TaskSet,
    demos: &[Trajectory],
    goals: &GoalEncoder<'_>,
) -> Result<(EmbeddingBank, EmbeddingBank)> {
    let dim = goals.encoders.dim();
    let mut bank_v = EmbeddingBank::new(Modality::Visual, dim)?;
    for t in demos.iter().filter(|t| t.has_transition()) {
        let e = goals.raw(GoalSource::Demo(t))?;
        bank_v.push(tasks.task(t.task_index).task_id.clone(), e.values())?;
    }
    let mut bank_l = EmbeddingBank::new(Modality::Text, dim)?;
    for task in &tasks.tasks {
        for p in &task.paraphrases {
            let e = goals.raw(GoalSource::Tokens(p))?;
            bank_l.push(task.task_id.clone(), e.values())?;
        }
    }
    Ok((bank_v, bank_l))
}

/// One-hot task indicator used as an encoder-free goal.
pub fn oracle_goal(task_index: usize, n_tasks: usize) -> Vec<f64> {
    let mut g = vec![0.0; n_tasks];
    g[task_index] = 1.0;
    g
}

/// `(state one-hot ++ unit goal) -> 5 action logits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub grid_size: usize,
    pub goal_dim: usize,
    pub net: Mlp,
}

impl ParamSet for PolicyParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.net.visit_mut(f);
    }
}

impl PolicyParams {
    pub fn init(
        grid_size: usize,
        goal_dim: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut sizes = vec![grid_size * grid_size + goal_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(Action::ALL.len());
        let mut rng = substream(seed, &[domain::POLICY_INIT]);
        Self {
            grid_size,
            goal_dim,
            net: Mlp::init(&sizes, activation, &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.grid_size * self.grid_size + self.goal_dim
    }

    /// The goal is scaled to unit length; a zero goal stays zero.
    pub fn input(&self, state: Cell, goal: &[f64]) -> Result<Vec<f64>> {
        if goal.len() != self.goal_dim {
            return Err(Error::Dimension(format!(
                "policy expects a {}-dimensional goal, got {}",
                self.goal_dim,
                goal.len()
            )));
        }
        let n = self.grid_size * self.grid_size;
        let mut x = vec![0.0; n + self.goal_dim];
        x[state.index(self.grid_size)] = 1.0;
        let norm = l2_norm(goal);
        if norm > 0.0 {
            x[n..]
                .iter_mut()
                .zip(goal)
                .for_each(|(xi, g)| *xi = g / norm);
        }
        Ok(x)
    }

    pub fn logits(&self, state: Cell, goal: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.input(state, goal)?))
    }

    /// Greedy action; ties go to the lower action index.
    pub fn act(&self, state: Cell, goal: &[f64]) -> Result<Action> {
        let logits = self.logits(state, goal)?;
        let mut best = 0;
        for (i, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = i;
            }
        }
        Ok(Action::from_index(best))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Parameter(
                "policy batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(
                "policy learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(
                "policy momentum must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One behaviour-cloning example with its clean (uncorrupted) goal.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub state: Cell,
    pub action: Action,
    pub goal: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyTraining {
    pub params: PolicyParams,
    pub loss_trace: Vec<f64>,
}

fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Cross-entropy behaviour cloning. Every sampled goal is corrupted afresh
/// with `noise` from a stream keyed by `(seed, step, batch slot)`.
pub fn fit_policy(
    grid_size: usize,
    goal_dim: usize,
    samples: &[PolicySample],
    noise: Option<&Noise>,
    cfg: &PolicyConfig,
) -> Result<PolicyTraining> {
    cfg.validate()?;
    if let Some(n) = noise {
        n.validate()?;
    }
    if samples.is_empty() {
        return Err(Error::EmptyBank("no behaviour-cloning samples".into()));
    }
    let mut params = PolicyParams::init(grid_size, goal_dim, &cfg.hidden, cfg.activation, cfg.seed);
    let mut opt = Sgd::new(&params, cfg.learning_rate, cfg.momentum);
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        let mut rng = substream(cfg.seed, &[domain::POLICY_BATCH, step as u64]);
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        for slot in 0..cfg.batch_size {
            let s = &samples[rng.random_range(0..samples.len())];
            let goal = match noise {
                None => s.goal.clone(),
                Some(n) => {
                    let mut nrng = substream(
                        cfg.seed,
                        &[domain::POLICY_CORRUPT, step as u64, slot as u64],
                    );
                    n.apply(&s.goal, &mut nrng)?
                }
            };
            let (logits, trace) = params.net.forward_trace(&params.input(s.state, &goal)?);
            let (l, mut g) = softmax_cross_entropy(&logits, s.action.index());
            loss += l * scale;
            g.iter_mut().for_each(|x| *x *= scale);
            params.net.backward(&trace, &g, &mut grads.net);
        }
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence { step });
        }
        loss_trace.push(loss);
        opt.step(&mut params, &grads);
    }
    Ok(PolicyTraining { params, loss_trace })
}

/// Fraction of samples whose greedy action matches the label, on clean goals.
pub fn action_accuracy(params: &PolicyParams, samples: &[PolicySample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for s in samples {
        hits += usize::from(params.act(s.state, &s.goal)? == s.action);
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Behaviour-cloning samples with goals in `modality`. Text demonstrations
/// use one seen instruction per trajectory, chosen from `(seed, index)`.
/// Zero-length demonstrations carry no action and no visual goal and are
/// skipped.
pub fn policy_samples(
    tasks: &TaskSet,
    dataset: &[Trajectory],
    goals: &GoalEncoder<'_>,
    modality: Modality,
    seed: u64,
) -> Result<Vec<PolicySample>> {
    let mut out = Vec::new();
    for (i, traj) in dataset
        .iter()
        .enumerate()
        .filter(|(_, t)| t.has_transition())
    {
        let task = tasks.task(traj.task_index);
        let goal = match modality {
            Modality::Visual => goals.embed(GoalSource::Demo(traj))?,
            Modality::Text => {
                let mut rng = substream(seed, &[domain::TEMPLATE, i as u64]);
                let p = &task.paraphrases[rng.random_range(0..task.paraphrases.len())];
                goals.embed(GoalSource::Tokens(p))?
            }
        };
        push_steps(&mut out, traj, goal.values());
    }
    Ok(out)
}

/// Samples whose goal is the task's one-hot indicator.
pub fn oracle_samples(tasks: &TaskSet, dataset: &[Trajectory]) -> Vec<PolicySample> {
    let mut out = Vec::new();
    for traj in dataset {
        push_steps(
            &mut out,
            traj,
            &oracle_goal(traj.task_index, tasks.tasks.len()),
        );
    }
    out
}

fn push_steps(out: &mut Vec<PolicySample>, traj: &Trajectory, goal: &[f64]) {
    for (state, action) in traj.states.iter().zip(&traj.actions) {
        out.push(PolicySample {
            state: *state,
            action: *action,
            goal: goal.to_vec(),
        });
    }
}

/// Trains on `train_modality` goals only.
pub fn train_policy(
    tasks: &TaskSet,
    dataset: &[Trajectory],
    goals: &GoalEncoder<'_>,
    noise: Option<&Noise>,
    train_modality: Modality,
    cfg: &PolicyConfig,
) -> Result<PolicyTraining> {
    let samples = policy_samples(tasks, dataset, goals, train_modality, cfg.seed)?;
    fit_policy(tasks.world.size, goals.output_dim(), &samples, noise, cfg)
}

/// Prompts used to specify goals at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptSet {
    /// Frame difference of a fresh demonstration.
    Visual,
    /// An instruction from the seen templates.
    Text,
    /// An instruction from templates the encoder never saw.
    TextHeldout,
}

impl PromptSet {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptSet::Visual => "visual",
            PromptSet::Text => "text",
            PromptSet::TextHeldout => "text-heldout",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            PromptSet::Visual => Modality::Visual,
            PromptSet::Text | PromptSet::TextHeldout => Modality::Text,
        }
    }
}

impl From<Modality> for PromptSet {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Visual => PromptSet::Visual,
            Modality::Text => PromptSet::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes_per_task: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes_per_task: 10,
            horizon: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEval {
    pub task_id: String,
    pub successes: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub per_task: Vec<TaskEval>,
}

/// Steps `act` until the agent stands on `target` (success) or the horizon
/// runs out. A start on the target succeeds even with horizon 0.
pub fn rollout<F>(
    grid_size: usize,
    start: Cell,
    target: Cell,
    horizon: usize,
    mut act: F,
) -> Result<bool>
where
    F: FnMut(Cell) -> Result<Action>,
{
    let mut cur = start;
    for t in 0..=horizon {
        if cur == target {
            return Ok(true);
        }
        if t == horizon {
            break;
        }
        cur = act(cur)?.step(cur, grid_size);
    }
    Ok(false)
}

/// Every episode draws its start (never the target) and its goal prompt
/// from the stream `(seed, task, episode)`. Visual goals are recorded from a
/// fresh demonstration that begins at the episode's start cell.
fn evaluate_with<G, A>(
    tasks: &TaskSet,
    cfg: &EvalConfig,
    mut goal_for: G,
    mut act: A,
) -> Result<EvalReport>
where
    G: FnMut(&GridTask, Cell, &mut Rng) -> Result<Option<Vec<f64>>>,
    A: FnMut(Cell, Option<&[f64]>, &mut Rng) -> Result<Action>,
{
    let g = tasks.world.size;
    if cfg.horizon < 2 * (g - 1) {
        return Err(Error::Parameter(format!(
            "horizon {} cannot reach every cell of a {g}x{g} grid",
            cfg.horizon
        )));
    }
    let cells = tasks.world.num_cells();
    let mut per_task = Vec::with_capacity(tasks.tasks.len());
    let mut total = 0;
    for task in &tasks.tasks {
        let mut successes = 0;
        for ep in 0..cfg.episodes_per_task {
            let mut rng = substream(cfg.seed, &[domain::EVAL, task.index as u64, ep as u64]);
            let mut s = rng.random_range(0..cells - 1);
            if s >= task.target.index(g) {
                s += 1;
            }
            let start = Cell::from_index(s, g);
            let goal = goal_for(task, start, &mut rng)?;
            let mut act_rng = substream(cfg.seed, &[domain::EVAL, task.index as u64, ep as u64, 1]);
            let ok = rollout(g, start, task.target, cfg.horizon, |c| {
                act(c, goal.as_deref(), &mut act_rng)
            })?;
            successes += usize::from(ok);
        }
        total += successes;
        per_task.push(TaskEval {
            task_id: task.task_id.clone(),
            successes,
            episodes: cfg.episodes_per_task,
        });
    }
    let episodes = tasks.tasks.len() * cfg.episodes_per_task;
    Ok(EvalReport {
        success_rate: if episodes == 0 {
            0.0
        } else {
            total as f64 / episodes as f64
        },
        per_task,
    })
}

/// Greedy rollouts with collapsed, uncorrupted goals from `prompts`.
pub fn evaluate_policy(
    policy: &PolicyParams,
    tasks: &TaskSet,
    prompts: PromptSet,
    goals: &GoalEncoder<'_>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    evaluate_with(
        tasks,
        cfg,
        |task, start, rng| {
            let e = match prompts {
                PromptSet::Visual => {
                    let demo = expert_trajectory(&tasks.world, task, start, rng.random())?;
                    goals.embed(GoalSource::Demo(&demo))?
                }
                PromptSet::Text => {
                    let p = &task.paraphrases[rng.random_range(0..task.paraphrases.len())];
                    goals.embed(GoalSource::Tokens(p))?
                }
                PromptSet::TextHeldout => {
                    let p = &task.heldout_paraphrases
                        [rng.random_range(0..task.heldout_paraphrases.len())];
                    goals.embed(GoalSource::Tokens(p))?
                }
            };
            Ok(Some(e.into_values()))
        },
        |cell, goal, _| policy.act(cell, goal.expect("goal present")),
    )
}

/// Greedy rollouts with one-hot task goals.
pub fn evaluate_oracle(
    policy: &PolicyParams,
    tasks: &TaskSet,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let n = tasks.tasks.len();
    evaluate_with(
        tasks,
        cfg,
        |task, _, _| Ok(Some(oracle_goal(task.index, n))),
        |cell, goal, _| policy.act(cell, goal.expect("goal present")),
    )
}

/// The chance floor: uniformly random actions under the same protocol.
pub fn evaluate_random(tasks: &TaskSet, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_with(
        tasks,
        cfg,
        |_, _, _| Ok(None),
        |_, _, rng| Ok(Action::from_index(rng.random_range(0..Action::ALL.len()))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::grid::{build_dataset, generate_tasks};

    #[test]
    fn rollout_boundaries() {
        let c = Cell::new(1, 1);
        assert!(rollout(3, c, c, 0, |_| Ok(Action::Stay)).unwrap());
        assert!(!rollout(3, Cell::new(0, 0), c, 0, |_| Ok(Action::Down)).unwrap());
        assert!(rollout(3, Cell::new(0, 1), c, 1, |_| Ok(Action::Down)).unwrap());
    }

    #[test]
    fn zero_steps_returns_init() {
        let ts = generate_tasks(3, 0).unwrap();
        let ds = build_dataset(&ts, 2, 0).unwrap();
        let samples = oracle_samples(&ts, &ds);
        let cfg = PolicyConfig {
            steps: 0,
            seed: 4,
            ..PolicyConfig::default()
        };
        let fit = fit_policy(3, 9, &samples, None, &cfg).unwrap();
        let init = PolicyParams::init(3, 9, &cfg.hidden, cfg.activation, 4);
        assert_eq!(fit.params, init);
        assert!(fit.loss_trace.is_empty());
    }

    #[test]
    fn oracle_goals_are_learnable() {
        let ts = generate_tasks(5, 0).unwrap();
        let ds = build_dataset(&ts, 20, 0).unwrap();
        let samples = oracle_samples(&ts, &ds);
        let cfg = PolicyConfig {
            steps: 1500,
            ..PolicyConfig::default()
        };
        let fit = fit_policy(5, 25, &samples, None, &cfg).unwrap();
        let acc = action_accuracy(&fit.params, &samples).unwrap();
        assert!(acc >= 0.99, "training accuracy {acc}");
        let eval = evaluate_oracle(&fit.params, &ts, &EvalConfig::default()).unwrap();
        assert!(
            eval.success_rate >= 0.95,
            "oracle success {}",
            eval.success_rate
        );
        let again = fit_policy(5, 25, &samples, None, &cfg).unwrap();
        assert_eq!(again.params, fit.params);
    }

    #[test]
    fn chance_floor_is_low_and_pure() {
        let ts = generate_tasks(5, 0).unwrap();
        let cfg = EvalConfig {
            horizon: 8,
            ..EvalConfig::default()
        };
        let a = evaluate_random(&ts, &cfg).unwrap();
        assert!(a.success_rate < 0.5, "{}", a.success_rate);
        assert_eq!(a, evaluate_random(&ts, &cfg).unwrap());
        let short = EvalConfig { horizon: 7, ..cfg };
        assert!(evaluate_random(&ts, &short).is_err());
    }

    #[test]
    fn goal_modality_must_match_source() {
        let ts = generate_tasks(3, 0).unwrap();
        let arch =
            crate::contrastive::EncoderArch::new(ts.world.observation_dim(), ts.vocab.len(), 4);
        let params = EncoderParams::init(&arch, 0).unwrap();
        let tokens = ts.tasks[0].paraphrases[0].clone();
        assert!(
            goal_embedding(&params, None, GoalSource::Tokens(&tokens), Modality::Visual).is_err()
        );
        let a = goal_embedding(&params, None, GoalSource::Tokens(&tokens), Modality::Text).unwrap();
        let b = goal_embedding(&params, None, GoalSource::Tokens(&tokens), Modality::Text).unwrap();
        assert_eq!(a, b);
        let still = expert_trajectory(&ts.world, &ts.tasks[4], Cell::new(1, 1), 0).unwrap();
        assert!(matches!(
            goal_embedding(&params, None, GoalSource::Demo(&still), Modality::Visual),
            Err(Error::DegenerateVector(_))
        ));
    }
}
