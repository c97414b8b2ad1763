//! Episodic taxi on a 5×5 grid with passengers appearing at the corners.
//!
//! State: taxi cell (25) × waiting-passenger bits at the four corners (16) ×
//! cargo (empty or one of four destinations). Actions move N, S, E, W;
//! moving into the boundary leaves the taxi in place. Pickup and drop-off
//! happen automatically on entering the relevant corner. Delivering the
//! passenger ends the episode.

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub const GRID: usize = 5;
pub const N_CELLS: usize = GRID * GRID;
pub const N_CORNERS: usize = 4;
pub const N_CARGO: usize = N_CORNERS + 1;
pub const N_TAXI_STATES: usize = N_CELLS * (1 << N_CORNERS) * N_CARGO;
pub const N_TAXI_ACTIONS: usize = 4;

/// Per-corner, per-step flip probability used when none is given.
pub const DEFAULT_APPEAR_PROB: f64 = 0.05;

/// Corner cells in bit order R, G, B, Y.
pub const CORNERS: [usize; N_CORNERS] = [0, GRID - 1, N_CELLS - 1, N_CELLS - GRID];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    North = 0,
    South = 1,
    East = 2,
    West = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::North, Action::South, Action::East, Action::West];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cargo {
    Empty,
    /// Carrying a passenger bound for corner `k` (0..4, order R, G, B, Y).
    To(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaxiState {
    pub taxi_pos: u8,
    pub passenger_bits: u8,
    pub cargo: Cargo,
}

impl TaxiState {
    pub fn encode(&self) -> usize {
        let cargo = match self.cargo {
            Cargo::Empty => 0,
            Cargo::To(k) => 1 + k as usize,
        };
        ((self.taxi_pos as usize * 16) + self.passenger_bits as usize) * N_CARGO + cargo
    }

    pub fn decode(index: usize) -> Self {
        assert!(index < N_TAXI_STATES, "taxi state index {index} out of range");
        let cargo = match index % N_CARGO {
            0 => Cargo::Empty,
            c => Cargo::To((c - 1) as u8),
        };
        let rest = index / N_CARGO;
        TaxiState { taxi_pos: (rest / 16) as u8, passenger_bits: (rest % 16) as u8, cargo }
    }
}

/// Cell reached from `pos` by `action`, or `None` when the move would leave
/// the grid.
pub fn try_move(pos: usize, action: usize) -> Option<usize> {
    let (row, col) = (pos / GRID, pos % GRID);
    match action {
        0 if row > 0 => Some(pos - GRID),
        1 if row + 1 < GRID => Some(pos + GRID),
        2 if col + 1 < GRID => Some(pos + 1),
        3 if col > 0 => Some(pos - 1),
        _ => None,
    }
}

/// Whether `action` keeps the taxi on the grid from encoded state `state`.
pub fn is_legal(state: usize, action: usize) -> bool {
    try_move(TaxiState::decode(state).taxi_pos as usize, action).is_some()
}

fn corner_index(pos: usize) -> Option<usize> {
    CORNERS.iter().position(|&c| c == pos)
}

/// Distribution over the flip pattern of the corners in `mask`; each listed
/// corner flips independently with probability `p`.
fn flip_patterns(mask: u8, p: f64) -> Vec<(u8, f64)> {
    let mut out = vec![(0u8, 1.0)];
    for k in 0..N_CORNERS {
        if mask & (1 << k) == 0 {
            continue;
        }
        out = out
            .into_iter()
            .flat_map(|(pat, pr)| [(pat, pr * (1.0 - p)), (pat | (1 << k), pr * p)])
            .collect();
    }
    out
}

/// Mean reward and sparse next-state row for one state-action pair.
fn taxi_row(state: TaxiState, action: usize, p: f64) -> (f64, Vec<(usize, f64)>) {
    let pos = state.taxi_pos as usize;
    let new_pos = try_move(pos, action).unwrap_or(pos);
    if let Cargo::To(k) = state.cargo {
        if CORNERS[k as usize] == new_pos {
            return (0.0, vec![(N_TAXI_STATES, 1.0)]);
        }
    }
    let reward = if state.cargo == Cargo::Empty { -2.0 } else { -1.0 };
    let pickup = match (state.cargo, corner_index(new_pos)) {
        (Cargo::Empty, Some(c)) if state.passenger_bits & (1 << c) != 0 => Some(c),
        _ => None,
    };
    let mut row = Vec::new();
    match pickup {
        Some(c) => {
            let bits = state.passenger_bits & !(1u8 << c);
            let others = 0b1111 & !(1u8 << c);
            for dest in 0..N_CORNERS as u8 {
                for (pat, pr) in flip_patterns(others, p) {
                    let next = TaxiState { taxi_pos: new_pos as u8, passenger_bits: bits ^ pat, cargo: Cargo::To(dest) };
                    row.push((next.encode(), pr / N_CORNERS as f64));
                }
            }
        }
        None => {
            for (pat, pr) in flip_patterns(0b1111, p) {
                let next = TaxiState { taxi_pos: new_pos as u8, passenger_bits: state.passenger_bits ^ pat, cargo: state.cargo };
                row.push((next.encode(), pr));
            }
        }
    }
    (reward, row)
}

/// Builds the taxi model. `appear_prob` is the per-step probability that
/// the waiting status of each corner flips.
pub fn build_taxi(appear_prob: f64) -> Result<TabularMdp> {
    if !(0.0..=1.0).contains(&appear_prob) {
        return Err(Error::InvalidArgument(format!("appear_prob must lie in [0, 1], got {appear_prob}")));
    }
    let mut rows = Vec::with_capacity(N_TAXI_STATES * N_TAXI_ACTIONS);
    let mut rewards = Vec::with_capacity(N_TAXI_STATES * N_TAXI_ACTIONS);
    for s in 0..N_TAXI_STATES {
        let state = TaxiState::decode(s);
        for a in 0..N_TAXI_ACTIONS {
            let (r, row) = taxi_row(state, a, appear_prob);
            rewards.push(r);
            rows.push(row);
        }
    }
    // Taxi waits at a uniformly chosen corner, empty, with each corner's
    // passenger present independently with probability `appear_prob`.
    let mut initial = vec![0.0; N_TAXI_STATES];
    for &corner in &CORNERS {
        for (bits, pr) in flip_patterns(0b1111, appear_prob) {
            let st = TaxiState { taxi_pos: corner as u8, passenger_bits: bits, cargo: Cargo::Empty };
            initial[st.encode()] += pr / N_CORNERS as f64;
        }
    }
    TabularMdp::from_sparse(N_TAXI_STATES, N_TAXI_ACTIONS, rows, rewards, initial, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_bijection() {
        for i in 0..N_TAXI_STATES {
            assert_eq!(TaxiState::decode(i).encode(), i);
        }
        assert_eq!(N_TAXI_STATES, 2000);
    }

    #[test]
    fn legal_move_counts() {
        for pos in 0..N_CELLS {
            let legal = (0..4).filter(|&a| try_move(pos, a).is_some()).count();
            let (row, col) = (pos / GRID, pos % GRID);
            let edges = [row == 0, row == GRID - 1, col == 0, col == GRID - 1].iter().filter(|&&e| e).count();
            assert_eq!(legal, 4 - edges);
        }
        for c in CORNERS {
            assert_eq!((0..4).filter(|&a| try_move(c, a).is_some()).count(), 2);
        }
    }

    #[test]
    fn structure() {
        let mdp = build_taxi(DEFAULT_APPEAR_PROB).unwrap();
        assert_eq!(mdp.n_states(), 2000);
        assert_eq!(mdp.n_actions(), 4);
        for s in 0..N_TAXI_STATES {
            let st = TaxiState::decode(s);
            for a in 0..4 {
                let total: f64 = mdp.transition_row(s, a).iter().map(|e| e.1).sum();
                assert!((total - 1.0).abs() < 1e-12);
                let absorbs = mdp.absorb_prob(s, a) > 0.0;
                let delivers = matches!(st.cargo, Cargo::To(k)
                    if try_move(st.taxi_pos as usize, a).unwrap_or(st.taxi_pos as usize) == CORNERS[k as usize]);
                assert_eq!(absorbs, delivers, "state {s} action {a}");
                let expected = if delivers { 0.0 } else if st.cargo == Cargo::Empty { -2.0 } else { -1.0 };
                assert_eq!(mdp.mean_reward(s, a), expected);
            }
        }
    }

    #[test]
    fn delivery_one_step_away() {
        let mdp = build_taxi(0.0).unwrap();
        // Carrying to R (cell 0) from cell 1; moving west delivers.
        let st = TaxiState { taxi_pos: 1, passenger_bits: 0, cargo: Cargo::To(0) };
        let s = st.encode();
        assert_eq!(mdp.transition_row(s, Action::West as usize), &[(N_TAXI_STATES, 1.0)]);
        assert_eq!(mdp.mean_reward(s, Action::West as usize), 0.0);
        // Any other move keeps carrying, deterministically with p = 0.
        let row = mdp.transition_row(s, Action::South as usize);
        assert_eq!(row.len(), 1);
        assert_eq!(TaxiState::decode(row[0].0).taxi_pos, 6);
        assert_eq!(mdp.mean_reward(s, Action::South as usize), -1.0);
    }

    #[test]
    fn pickup_assigns_random_destination() {
        let mdp = build_taxi(0.0).unwrap();
        // Empty taxi at cell 1, passenger waiting at R.
        let st = TaxiState { taxi_pos: 1, passenger_bits: 0b0001, cargo: Cargo::Empty };
        let row = mdp.transition_row(st.encode(), Action::West as usize);
        assert_eq!(row.len(), 4);
        for &(next, p) in row {
            let ns = TaxiState::decode(next);
            assert_eq!(ns.taxi_pos, 0);
            assert_eq!(ns.passenger_bits, 0);
            assert!(matches!(ns.cargo, Cargo::To(_)));
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn initial_distribution_on_empty_corners() {
        let mdp = build_taxi(0.1).unwrap();
        for (s, &p) in mdp.initial_dist().iter().enumerate() {
            if p > 0.0 {
                let st = TaxiState::decode(s);
                assert!(CORNERS.contains(&(st.taxi_pos as usize)));
                assert_eq!(st.cargo, Cargo::Empty);
            }
        }
        assert!(build_taxi(1.5).is_err());
    }
}
