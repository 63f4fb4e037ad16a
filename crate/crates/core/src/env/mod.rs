//! The simplified cooking gridworld.
//!
//! A single agent walks a 5x3 grid with three counters: an onion dispenser,
//! an oven and a delivery counter. An onion placed in the oven starts a hidden
//! cooking timer; the soup can only be taken out once the timer reaches the
//! target duration, and nothing in the observation says when that happens.
//! Delivering a soup pays +1. The dual-task variant adds a number counter that
//! shows a digit for the four steps after each onion placement; answering
//! `Interact` for numbers below 5 and `Wait` otherwise pays +1 per step.

mod observation;
pub mod planner;

pub use observation::{Observation, CHANNELS, OBS_LEN};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

pub const WIDTH: usize = 5;
pub const HEIGHT: usize = 3;
pub const EPISODE_LEN: u32 = 100;
pub const NUMBER_WINDOW_LEN: u8 = 4;
/// Cook times used in the experiments.
pub const TARGETS: [u32; 4] = [7, 8, 9, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    /// Timing task only.
    SingleT,
    /// Timing task plus the concurrent number comparison.
    DualTN,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::SingleT, TaskKind::DualTN];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SingleT => "single",
            TaskKind::DualTN => "dual",
        }
    }

    /// Label used in report files (`T` / `T+N`).
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::SingleT => "T",
            TaskKind::DualTN => "T+N",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "T" | "SingleT" => Ok(TaskKind::SingleT),
            "dual" | "T+N" | "DualTN" => Ok(TaskKind::DualTN),
            other => Err(Error::Config(format!("unknown task {other:?} (expected single|dual)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Cell { col, row }
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        self.col.abs_diff(other.col) + self.row.abs_diff(other.row) == 1
    }

    /// Destination of a move, or `None` when it would leave the grid.
    pub fn moved(self, action: Action) -> Option<Cell> {
        let Cell { col, row } = self;
        match action {
            Action::Up if row > 0 => Some(Cell::new(col, row - 1)),
            Action::Down if row + 1 < HEIGHT => Some(Cell::new(col, row + 1)),
            Action::Left if col > 0 => Some(Cell::new(col - 1, row)),
            Action::Right if col + 1 < WIDTH => Some(Cell::new(col + 1, row)),
            _ => None,
        }
    }

    pub fn neighbors(self) -> impl Iterator<Item = Cell> {
        Action::MOVES.into_iter().filter_map(move |a| self.moved(a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Counter {
    Dispenser,
    Oven,
    Delivery,
    Number,
}

impl Counter {
    /// Integer written into the layout channel of the observation.
    pub fn code(self) -> u8 {
        match self {
            Counter::Dispenser => 1,
            Counter::Oven => 2,
            Counter::Delivery => 3,
            Counter::Number => 4,
        }
    }
}

/// Static counter placement. Every non-counter cell is walkable floor.
///
/// Coordinates are `(col, row)` from the top-left corner:
///
/// ```text
///   . . O . .      D dispenser   O oven
///   D A . . X      X delivery    N number counter (dual task only)
///   . . N . .      A agent start
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    counters: Vec<(Counter, Cell)>,
    start: Cell,
}

impl GridLayout {
    pub fn canonical(task: TaskKind) -> Self {
        let mut counters = vec![
            (Counter::Dispenser, Cell::new(0, 1)),
            (Counter::Oven, Cell::new(2, 0)),
            (Counter::Delivery, Cell::new(4, 1)),
        ];
        if task == TaskKind::DualTN {
            counters.push((Counter::Number, Cell::new(2, 2)));
        }
        GridLayout { counters, start: Cell::new(1, 1) }
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn counters(&self) -> &[(Counter, Cell)] {
        &self.counters
    }

    pub fn counter_at(&self, cell: Cell) -> Option<Counter> {
        self.counters.iter().find(|(_, c)| *c == cell).map(|(k, _)| *k)
    }

    pub fn cell_of(&self, counter: Counter) -> Option<Cell> {
        self.counters.iter().find(|(k, _)| *k == counter).map(|(_, c)| *c)
    }

    pub fn oven(&self) -> Cell {
        self.cell_of(Counter::Oven).expect("layout has an oven")
    }

    pub fn is_walkable(&self, cell: Cell) -> bool {
        cell.col < WIDTH && cell.row < HEIGHT && self.counter_at(cell).is_none()
    }

    pub fn walkable_cells(&self) -> Vec<Cell> {
        (0..HEIGHT)
            .flat_map(|row| (0..WIDTH).map(move |col| Cell::new(col, row)))
            .filter(|&c| self.is_walkable(c))
            .collect()
    }

    /// Walkable cells from which `counter` can be interacted with.
    pub fn access_cells(&self, counter: Counter) -> Vec<Cell> {
        match self.cell_of(counter) {
            Some(at) => at.neighbors().filter(|&c| self.is_walkable(c)).collect(),
            None => Vec::new(),
        }
    }

    pub fn adjacent_to(&self, cell: Cell, counter: Counter) -> bool {
        self.cell_of(counter).is_some_and(|at| at.is_adjacent(cell))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Wait,
    Up,
    Down,
    Left,
    Right,
    Interact,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] =
        [Action::Wait, Action::Up, Action::Down, Action::Left, Action::Right, Action::Interact];
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Wait => "wait",
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Interact => "interact",
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::MalformedTrace(format!("unknown action {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Carrying {
    Nothing,
    Onion,
    Soup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Oven {
    Off,
    /// `timer` counts steps since the onion went in.
    Cooking { timer: u32, target: u32 },
}

impl Oven {
    pub fn timer(self) -> Option<u32> {
        match self {
            Oven::Off => None,
            Oven::Cooking { timer, .. } => Some(timer),
        }
    }

    pub fn is_ready(self) -> bool {
        matches!(self, Oven::Cooking { timer, target } if timer >= target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NumberWindow {
    Inactive,
    Active { remaining: u8, current: u8 },
}

impl NumberWindow {
    pub fn current(self) -> Option<u8> {
        match self {
            NumberWindow::Inactive => None,
            NumberWindow::Active { current, .. } => Some(current),
        }
    }
}

/// The correct response to a displayed number.
pub fn number_answer(n: u8) -> Action {
    if n < 5 {
        Action::Interact
    } else {
        Action::Wait
    }
}

fn draw_number<R: Rng + ?Sized>(rng: &mut R) -> u8 {
    rng.random_range(1..=10)
}

/// Scores one step of the number comparison and advances the window.
///
/// Returns the reward (1 for a correct answer, 0 otherwise) and the next
/// window state. A fresh number is drawn while the window stays open.
pub fn number_task_step<R: Rng + ?Sized>(
    window: NumberWindow,
    action: Action,
    rng: &mut R,
) -> Result<(f32, NumberWindow)> {
    let NumberWindow::Active { remaining, current } = window else {
        return Err(Error::Contract("number task stepped while the window is inactive".into()));
    };
    let reward = if action == number_answer(current) { 1.0 } else { 0.0 };
    let next = if remaining > 1 {
        NumberWindow::Active { remaining: remaining - 1, current: draw_number(rng) }
    } else {
        NumberWindow::Inactive
    };
    Ok((reward, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InteractOutcome {
    PickOnion,
    PlaceOnion,
    TakeSoup,
    Deliver,
    NoOp,
}

/// Per-step bookkeeping reported alongside the observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Cooking time seen by this step's action; `None` if the oven was off.
    pub oven_timer: Option<u32>,
    /// Trial the step belongs to (deliveries close a trial).
    pub trial_index: u32,
    /// Number the agent was answering this step, if the window was open.
    pub number_value: Option<u8>,
    pub delivery: bool,
    pub correct_number: bool,
    /// `Interact` while adjacent to a cooking oven.
    pub oven_check: bool,
    pub take_soup: bool,
    pub outcome: Option<InteractOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f32,
    pub done: bool,
    pub info: StepInfo,
}

/// Complete simulator state, including its own random generator.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub layout: GridLayout,
    pub task: TaskKind,
    pub target: u32,
    pub agent: Cell,
    pub carrying: Carrying,
    pub oven: Oven,
    pub window: NumberWindow,
    pub step_count: u32,
    pub trial_index: u32,
    rng: ChaCha8Rng,
}

/// Starts an episode. `target` must be one of [`TARGETS`].
pub fn reset(task: TaskKind, target: u32, seed: u64) -> Result<(EnvState, Observation)> {
    if !TARGETS.contains(&target) {
        return Err(Error::Config(format!(
            "target duration {target} outside {TARGETS:?}; use reset_any_target to override"
        )));
    }
    reset_any_target(task, target, seed)
}

/// Like [`reset`] but accepts any positive cook time.
pub fn reset_any_target(task: TaskKind, target: u32, seed: u64) -> Result<(EnvState, Observation)> {
    if target == 0 {
        return Err(Error::Config("target duration must be positive".into()));
    }
    let layout = GridLayout::canonical(task);
    let state = EnvState {
        agent: layout.start(),
        layout,
        task,
        target,
        carrying: Carrying::Nothing,
        oven: Oven::Off,
        window: NumberWindow::Inactive,
        step_count: 0,
        trial_index: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let obs = state.observe();
    Ok((state, obs))
}

impl EnvState {
    pub fn is_done(&self) -> bool {
        self.step_count >= EPISODE_LEN
    }

    pub fn observe(&self) -> Observation {
        Observation::encode(self)
    }

    /// What `Interact` would do from the current state.
    pub fn resolve_interact(&self) -> InteractOutcome {
        let at = self.agent;
        let near = |c| self.layout.adjacent_to(at, c);
        match self.carrying {
            Carrying::Nothing if near(Counter::Dispenser) => InteractOutcome::PickOnion,
            Carrying::Nothing if near(Counter::Oven) && self.oven.is_ready() => {
                InteractOutcome::TakeSoup
            }
            Carrying::Onion if near(Counter::Oven) && self.oven == Oven::Off => {
                InteractOutcome::PlaceOnion
            }
            Carrying::Soup if near(Counter::Delivery) => InteractOutcome::Deliver,
            _ => InteractOutcome::NoOp,
        }
    }

    fn apply_interact(&mut self, outcome: InteractOutcome) {
        match outcome {
            InteractOutcome::PickOnion => self.carrying = Carrying::Onion,
            InteractOutcome::PlaceOnion => {
                self.carrying = Carrying::Nothing;
                self.oven = Oven::Cooking { timer: 0, target: self.target };
                if self.task == TaskKind::DualTN {
                    let current = draw_number(&mut self.rng);
                    self.window = NumberWindow::Active { remaining: NUMBER_WINDOW_LEN, current };
                }
            }
            InteractOutcome::TakeSoup => {
                self.carrying = Carrying::Soup;
                self.oven = Oven::Off;
            }
            InteractOutcome::Deliver => {
                self.carrying = Carrying::Nothing;
                self.trial_index += 1;
            }
            InteractOutcome::NoOp => {}
        }
    }

    /// Advances the simulation by one step.
    ///
    /// Order within a step: the cooking timer advances, an open number window
    /// scores the action, then the action moves the agent or interacts.
    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeDone(self.step_count));
        }
        let trial_index = self.trial_index;

        if let Oven::Cooking { timer, .. } = &mut self.oven {
            *timer += 1;
        }
        let oven_timer = self.oven.timer();

        let number_value = self.window.current();
        let mut number_reward = 0.0;
        if number_value.is_some() {
            let (r, next) = number_task_step(self.window, action, &mut self.rng)?;
            number_reward = r;
            self.window = next;
        }

        let mut outcome = None;
        let mut oven_check = false;
        match action {
            Action::Wait => {}
            Action::Interact => {
                oven_check = oven_timer.is_some() && self.layout.adjacent_to(self.agent, Counter::Oven);
                let o = self.resolve_interact();
                self.apply_interact(o);
                outcome = Some(o);
            }
            mv => {
                if let Some(dest) = self.agent.moved(mv) {
                    if self.layout.is_walkable(dest) {
                        self.agent = dest;
                    }
                }
            }
        }

        let delivery = outcome == Some(InteractOutcome::Deliver);
        let reward = if delivery { 1.0 } else { 0.0 } + number_reward;
        self.step_count += 1;

        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.is_done(),
            info: StepInfo {
                oven_timer,
                trial_index,
                number_value,
                delivery,
                correct_number: number_reward > 0.0,
                oven_check,
                take_soup: outcome == Some(InteractOutcome::TakeSoup),
                outcome,
            },
        })
    }
}
