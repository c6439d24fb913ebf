//! The gridworld: one task per target cell, templated text instructions,
//! expert demonstrations rendered as one-hot observation grids.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::Serialize;

use crate::contrastive::{Pair, PairBatch, PairSource};
use crate::error::{Error, Result};
use crate::rng::{domain, substream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn index(self, grid_size: usize) -> usize {
        self.row * grid_size + self.col
    }

    pub fn from_index(i: usize, grid_size: usize) -> Self {
        Self::new(i / grid_size, i % grid_size)
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i]
    }

    /// Moves into a wall leave the agent in place.
    pub fn step(self, cell: Cell, grid_size: usize) -> Cell {
        let Cell { row, col } = cell;
        match self {
            Action::Up => Cell::new(row.saturating_sub(1), col),
            Action::Down => Cell::new((row + 1).min(grid_size - 1), col),
            Action::Left => Cell::new(row, col.saturating_sub(1)),
            Action::Right => Cell::new(row, (col + 1).min(grid_size - 1)),
            Action::Stay => cell,
        }
    }
}

/// Closed vocabulary generated with the tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    fn new(words: Vec<String>) -> Self {
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.ids
                    .get(w)
                    .copied()
                    .ok_or_else(|| Error::Parameter(format!("word {w:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

const FILLER: [&str; 9] = [
    "go", "to", "move", "the", "agent", "reach", "cell", "navigate", "square",
];

/// Templates the encoder trainer may see; `{R}` / `{C}` are row and column words.
const SEEN_TEMPLATES: [&str; 4] = [
    "go to {R} {C}",
    "move the agent to {R} {C}",
    "reach cell {C} {R}",
    "navigate to the {R} {C} square",
];

/// Paraphrases reserved for evaluation: known words, unseen arrangements.
const HELDOUT_TEMPLATES: [&str; 2] = ["navigate the agent to {C} {R}", "go to the {R} {C} cell"];

/// Seen templates assigned to each task.
pub const SEEN_PER_TASK: usize = 3;

fn row_word(r: usize) -> String {
    format!("row{r}")
}

fn col_word(c: usize) -> String {
    format!("col{c}")
}

fn render(template: &str, target: Cell) -> String {
    template
        .replace("{R}", &row_word(target.row))
        .replace("{C}", &col_word(target.col))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTask {
    pub task_id: String,
    pub index: usize,
    pub target: Cell,
    /// Instructions available for encoder training and policy training.
    pub paraphrases: Vec<Vec<usize>>,
    /// Instructions never shown to the encoder trainer.
    pub heldout_paraphrases: Vec<Vec<usize>>,
}

/// Grid geometry plus observation rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridWorld {
    pub size: usize,
    /// Static distractor markers drawn per demonstration.
    pub distractors: usize,
}

impl GridWorld {
    pub fn num_cells(&self) -> usize {
        self.size * self.size
    }

    /// Two stacked `size x size` channels: agent one-hot and distractor markers.
    pub fn observation_dim(&self) -> usize {
        2 * self.num_cells()
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.row < self.size && c.col < self.size
    }

    pub fn render(&self, agent: Cell, distractors: &[Cell]) -> Vec<f64> {
        let n = self.num_cells();
        let mut obs = vec![0.0; 2 * n];
        obs[agent.index(self.size)] = 1.0;
        for d in distractors {
            obs[n + d.index(self.size)] = 1.0;
        }
        obs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub world: GridWorld,
    pub vocab: Vocabulary,
    pub tasks: Vec<GridTask>,
}

impl TaskSet {
    pub fn task(&self, index: usize) -> &GridTask {
        &self.tasks[index]
    }
}

pub const DEFAULT_DISTRACTORS: usize = 2;

/// One task per cell of a `grid_size x grid_size` grid.
pub fn generate_tasks(grid_size: usize, seed: u64) -> Result<TaskSet> {
    generate_tasks_with(
        GridWorld {
            size: grid_size,
            distractors: DEFAULT_DISTRACTORS,
        },
        seed,
    )
}

pub fn generate_tasks_with(world: GridWorld, seed: u64) -> Result<TaskSet> {
    let g = world.size;
    if g < 3 {
        return Err(Error::Parameter(format!(
            "grid size must be at least 3, got {g}"
        )));
    }
    if world.distractors > world.num_cells() {
        return Err(Error::Parameter("more distractors than cells".into()));
    }
    let mut words: Vec<String> = FILLER.iter().map(|s| s.to_string()).collect();
    words.extend((0..g).map(row_word));
    words.extend((0..g).map(col_word));
    let vocab = Vocabulary::new(words);

    let tasks = (0..world.num_cells())
        .map(|i| {
            let target = Cell::from_index(i, g);
            let mut rng = substream(seed, &[domain::TASKS, i as u64]);
            let mut chosen = sample(&mut rng, SEEN_TEMPLATES.len(), SEEN_PER_TASK).into_vec();
            chosen.sort_unstable();
            let encode = |t: &str| vocab.encode(&render(t, target));
            Ok(GridTask {
                task_id: format!("r{}c{}", target.row, target.col),
                index: i,
                target,
                paraphrases: chosen
                    .iter()
                    .map(|&t| encode(SEEN_TEMPLATES[t]))
                    .collect::<Result<_>>()?,
                heldout_paraphrases: HELDOUT_TEMPLATES
                    .iter()
                    .map(|t| encode(t))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskSet {
        world,
        vocab,
        tasks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_index: usize,
    pub states: Vec<Cell>,
    pub actions: Vec<Action>,
    pub distractors: Vec<Cell>,
    pub observations: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn start(&self) -> Cell {
        self.states[0]
    }

    pub fn end(&self) -> Cell {
        *self
            .states
            .last()
            .expect("trajectory has at least one state")
    }

    pub fn first_observation(&self) -> &[f64] {
        &self.observations[0]
    }

    pub fn last_observation(&self) -> &[f64] {
        self.observations
            .last()
            .expect("trajectory has at least one observation")
    }

    /// True when the demonstration moves the agent at least once.
    pub fn has_transition(&self) -> bool {
        !self.actions.is_empty()
    }
}

/// Shortest expert path: row moves first, then column moves. Distractor
/// markers are drawn from `seed` and stay fixed along the trajectory.
pub fn expert_trajectory(
    world: &GridWorld,
    task: &GridTask,
    start: Cell,
    seed: u64,
) -> Result<Trajectory> {
    if !world.contains(start) || !world.contains(task.target) {
        return Err(Error::Parameter(format!(
            "cell {start:?} outside a {0}x{0} grid",
            world.size
        )));
    }
    let mut rng = substream(seed, &[domain::DISTRACTORS]);
    let distractors: Vec<Cell> = sample(&mut rng, world.num_cells(), world.distractors)
        .into_iter()
        .map(|i| Cell::from_index(i, world.size))
        .collect();

    let target = task.target;
    let mut cur = start;
    let mut states = vec![cur];
    let mut actions = Vec::with_capacity(start.manhattan(target));
    while cur != target {
        let a = if cur.row < target.row {
            Action::Down
        } else if cur.row > target.row {
            Action::Up
        } else if cur.col < target.col {
            Action::Right
        } else {
            Action::Left
        };
        cur = a.step(cur, world.size);
        actions.push(a);
        states.push(cur);
    }
    let observations = states
        .iter()
        .map(|&s| world.render(s, &distractors))
        .collect();
    Ok(Trajectory {
        task_index: task.index,
        states,
        actions,
        distractors,
        observations,
    })
}

/// `per_task` demonstrations for every task from uniformly random starts.
pub fn build_dataset(tasks: &TaskSet, per_task: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(tasks.tasks.len() * per_task);
    for task in &tasks.tasks {
        for i in 0..per_task {
            let mut rng = substream(seed, &[domain::DATASET, task.index as u64, i as u64]);
            let start = Cell::from_index(
                rng.random_range(0..tasks.world.num_cells()),
                tasks.world.size,
            );
            let traj_seed = rng.random();
            out.push(expert_trajectory(&tasks.world, task, start, traj_seed)?);
        }
    }
    Ok(out)
}

/// Contrastive pairs drawn from demonstrations: a random start frame paired
/// with the final frame, labelled with one of the task's instructions.
pub struct GridPairs<'a> {
    tasks: &'a TaskSet,
    trajectories: Vec<&'a Trajectory>,
}

impl<'a> GridPairs<'a> {
    /// Zero-length demonstrations carry no transition and are skipped.
    pub fn new(tasks: &'a TaskSet, dataset: &'a [Trajectory]) -> Result<Self> {
        let trajectories: Vec<&Trajectory> =
            dataset.iter().filter(|t| t.has_transition()).collect();
        if trajectories.is_empty() {
            return Err(Error::EmptyBank(
                "no demonstrations with a transition".into(),
            ));
        }
        Ok(Self {
            tasks,
            trajectories,
        })
    }
}

impl PairSource for GridPairs<'_> {
    fn sample_batch(&self, batch_size: usize, rng: &mut Rng) -> Result<PairBatch> {
        let rows = (0..batch_size)
            .map(|_| {
                let traj = self.trajectories[rng.random_range(0..self.trajectories.len())];
                let last = traj.states.len() - 1;
                // segment length m uniform over the valid suffix lengths 1..=last
                let m = rng.random_range(1..=last);
                let task = self.tasks.task(traj.task_index);
                let tokens = task.paraphrases[rng.random_range(0..task.paraphrases.len())].clone();
                Pair {
                    o_start: traj.observations[last - m].clone(),
                    o_end: traj.observations[last].clone(),
                    tokens,
                }
            })
            .collect();
        Ok(PairBatch { rows })
    }
}
