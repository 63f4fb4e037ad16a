use super::{Carrying, Counter, EnvState, NumberWindow, Oven, HEIGHT, WIDTH};

pub const CHANNELS: usize = 6;
pub const OBS_LEN: usize = CHANNELS * HEIGHT * WIDTH;

const CH_LAYOUT: usize = 0;
const CH_AGENT: usize = 1;
const CH_OVEN_ON: usize = 2;
const CH_ONION: usize = 3;
const CH_SOUP: usize = 4;
const CH_NUMBER: usize = 5;

/// Channel-major `6 x 3 x 5` observation.
///
/// | channel | content |
/// |---|---|
/// | 0 | counter code / 4 (floor 0, dispenser 1, oven 2, delivery 3, number 4) |
/// | 1 | agent position one-hot |
/// | 2 | oven on, broadcast |
/// | 3 | carrying onion, broadcast |
/// | 4 | carrying soup, broadcast |
/// | 5 | displayed number / 10 at the number counter, while shown |
///
/// There is deliberately no channel for the cooking timer or for soup
/// readiness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    data: [f32; OBS_LEN],
}

impl Observation {
    pub fn zeros() -> Self {
        Observation { data: [0.0; OBS_LEN] }
    }

    pub fn from_slice(values: &[f32]) -> Option<Self> {
        let data: [f32; OBS_LEN] = values.try_into().ok()?;
        Some(Observation { data })
    }

    pub fn encode(state: &EnvState) -> Self {
        let mut obs = Observation::zeros();
        for &(counter, cell) in state.layout.counters() {
            obs.set(CH_LAYOUT, cell.row, cell.col, f32::from(counter.code()) / 4.0);
        }
        obs.set(CH_AGENT, state.agent.row, state.agent.col, 1.0);
        if matches!(state.oven, Oven::Cooking { .. }) {
            obs.fill(CH_OVEN_ON, 1.0);
        }
        match state.carrying {
            Carrying::Onion => obs.fill(CH_ONION, 1.0),
            Carrying::Soup => obs.fill(CH_SOUP, 1.0),
            Carrying::Nothing => {}
        }
        if let (NumberWindow::Active { current, .. }, Some(cell)) =
            (state.window, state.layout.cell_of(Counter::Number))
        {
            obs.set(CH_NUMBER, cell.row, cell.col, f32::from(current) / 10.0);
        }
        obs
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[Self::index(channel, row, col)]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    fn index(channel: usize, row: usize, col: usize) -> usize {
        (channel * HEIGHT + row) * WIDTH + col
    }

    fn set(&mut self, channel: usize, row: usize, col: usize, v: f32) {
        self.data[Self::index(channel, row, col)] = v;
    }

    fn fill(&mut self, channel: usize, v: f32) {
        let plane = HEIGHT * WIDTH;
        self.data[channel * plane..(channel + 1) * plane].fill(v);
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let plane = HEIGHT * WIDTH;
        &self.data[channel * plane..(channel + 1) * plane]
    }
}
