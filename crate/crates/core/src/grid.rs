//! Grid-world robot environment with a parametric slip model, and the
//! safety/progress feature provider used by the Boltzmann policy.
//!
//! Cells are indexed row-major with row 0 at the top (north) of the text
//! layout. Actions are North, East, South, West in that order.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::mrp::MrpProblem;
use crate::rsp::{FeatureProvider, FeatureTable};

pub const NUM_ACTIONS: usize = 4;
pub const NORTH: usize = 0;
pub const EAST: usize = 1;
pub const SOUTH: usize = 2;
pub const WEST: usize = 3;

/// Sentinel progress value for cells with no path to any goal.
pub const UNREACHABLE: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLabel {
    Free,
    Initial,
    Goal,
    Unsafe,
}

impl CellLabel {
    pub fn glyph(self) -> char {
        match self {
            CellLabel::Free => '.',
            CellLabel::Initial => 'S',
            CellLabel::Goal => 'G',
            CellLabel::Unsafe => '#',
        }
    }

    pub fn from_glyph(c: char) -> Option<Self> {
        match c {
            '.' => Some(CellLabel::Free),
            'S' => Some(CellLabel::Initial),
            'G' => Some(CellLabel::Goal),
            '#' => Some(CellLabel::Unsafe),
            _ => None,
        }
    }
}

/// How a commanded move spreads its probability over neighbouring cells.
///
/// In a cell with roughness ρ the intended neighbour receives
/// `p₀·(1 − κρ)`; the remaining slip mass goes `lateral_split` to each side,
/// `back_fraction` backwards and the rest stays in place. Mass aimed off the
/// grid stays in the current cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipModel {
    pub base_intended: f64,
    pub lateral_split: f64,
    pub back_fraction: f64,
    pub roughness_gain: f64,
}

impl Default for SlipModel {
    fn default() -> Self {
        Self { base_intended: 0.85, lateral_split: 0.5, back_fraction: 0.0, roughness_gain: 0.3 }
    }
}

/// Probability masses of one commanded move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveMasses {
    pub intended: f64,
    pub lateral_each: f64,
    pub back: f64,
    pub stay: f64,
}

impl SlipModel {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.base_intended)
            && (0.0..=1.0).contains(&self.roughness_gain)
            && self.lateral_split >= 0.0
            && self.back_fraction >= 0.0
            && 2.0 * self.lateral_split + self.back_fraction <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid slip model {self:?}")))
        }
    }

    pub fn masses(&self, roughness: f64) -> MoveMasses {
        let intended = self.base_intended * (1.0 - self.roughness_gain * roughness);
        let slip = 1.0 - intended;
        let lateral_each = slip * self.lateral_split;
        let back = slip * self.back_fraction;
        let stay = (slip - 2.0 * lateral_each - back).max(0.0);
        MoveMasses { intended, lateral_each, back, stay }
    }
}

/// Which cells the goal-distance search may pass through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProgressMode {
    /// Unsafe cells receive a distance but the search does not expand them.
    #[default]
    AvoidUnsafe,
    /// Plain grid distance, ignoring labels.
    Geometric,
}

/// Grid layout plus everything needed to build its MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<CellLabel>,
    /// Per-cell roughness in `[0, 1)`.
    pub roughness: Vec<f64>,
    pub slip: SlipModel,
    /// Neighbourhood radius `r_n` of the safety score.
    pub radius: usize,
    pub progress_mode: ProgressMode,
}

impl GridSpec {
    /// Layout-only spec: zero roughness, default slip, `r_n = 2`.
    pub fn from_labels(width: usize, height: usize, labels: Vec<CellLabel>) -> Result<Self> {
        let spec = Self {
            width,
            height,
            roughness: vec![0.0; labels.len()],
            labels,
            slip: SlipModel::default(),
            radius: 2,
            progress_mode: ProgressMode::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.width * self.height;
        if cells == 0 {
            return Err(Error::Invalid("grid must have at least one cell".into()));
        }
        if self.labels.len() != cells || self.roughness.len() != cells {
            return Err(Error::Dimension { expected: cells, got: self.labels.len().min(self.roughness.len()) });
        }
        let initials = self.labels.iter().filter(|l| **l == CellLabel::Initial).count();
        if initials != 1 {
            return Err(Error::Invalid(format!("grid needs exactly one initial cell, found {initials}")));
        }
        if !self.labels.contains(&CellLabel::Goal) {
            return Err(Error::Invalid("grid needs at least one goal cell".into()));
        }
        if let Some(r) = self.roughness.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Invalid(format!("roughness {r} outside [0,1)")));
        }
        self.slip.validate()
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn coords(&self, x: usize) -> (usize, usize) {
        (x / self.width, x % self.width)
    }

    pub fn initial_cell(&self) -> usize {
        self.labels.iter().position(|l| *l == CellLabel::Initial).expect("validated grid has an initial cell")
    }

    pub fn cells_with(&self, label: CellLabel) -> Vec<usize> {
        (0..self.num_cells()).filter(|&x| self.labels[x] == label).collect()
    }

    /// Neighbour of `x` in direction `dir`, if inside the grid.
    pub fn neighbor(&self, x: usize, dir: usize) -> Option<usize> {
        let (r, c) = self.coords(x);
        match dir {
            NORTH if r > 0 => Some(x - self.width),
            SOUTH if r + 1 < self.height => Some(x + self.width),
            EAST if c + 1 < self.width => Some(x + 1),
            WEST if c > 0 => Some(x - 1),
            _ => None,
        }
    }

    fn neighbors(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_ACTIONS).filter_map(move |d| self.neighbor(x, d))
    }

    /// Replaces roughness with i.i.d. uniform `[0,1)` draws from `seed`.
    pub fn with_random_roughness(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.roughness = (0..self.num_cells()).map(|_| rng.gen::<f64>()).collect();
        self
    }
}

/// Builds the MRP model of the grid: one state per cell, four actions masked
/// at the border, goal and unsafe cells absorbing.
pub fn build_grid_mdp(spec: &GridSpec) -> Result<MrpProblem> {
    let mdp = build_grid_model(spec)?;
    MrpProblem::new(mdp, spec.cells_with(CellLabel::Goal), spec.cells_with(CellLabel::Unsafe))
}

/// The grid's transition model alone, without the reachability checks of
/// [`MrpProblem::new`].
pub fn build_grid_model(spec: &GridSpec) -> Result<FiniteMdp> {
    spec.validate()?;
    let mut mdp = FiniteMdp::new(spec.num_cells(), NUM_ACTIONS, spec.initial_cell())?;
    for x in 0..spec.num_cells() {
        let absorbing = matches!(spec.labels[x], CellLabel::Goal | CellLabel::Unsafe);
        let masses = spec.slip.masses(spec.roughness[x]);
        for u in 0..NUM_ACTIONS {
            let Some(target) = spec.neighbor(x, u) else { continue };
            if absorbing {
                mdp.set_row(x, u, &[(x, 1.0)], 0.0)?;
                continue;
            }
            let left = spec.neighbor(x, (u + 3) % 4).unwrap_or(x);
            let right = spec.neighbor(x, (u + 1) % 4).unwrap_or(x);
            let back = spec.neighbor(x, (u + 2) % 4).unwrap_or(x);
            let row = [
                (target, masses.intended),
                (left, masses.lateral_each),
                (right, masses.lateral_each),
                (back, masses.back),
                (x, masses.stay),
            ];
            mdp.set_row(x, u, &row, 0.0)?;
        }
    }
    Ok(mdp)
}

/// Cells within grid distance `radius` of `x`, including `x`.
pub fn neighborhood(spec: &GridSpec, x: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; spec.num_cells()];
    dist[x] = 0;
    let mut out = vec![x];
    let mut queue = VecDeque::from([x]);
    while let Some(y) = queue.pop_front() {
        if dist[y] == spec.radius {
            continue;
        }
        for z in spec.neighbors(y) {
            if dist[z] == usize::MAX {
                dist[z] = dist[y] + 1;
                out.push(z);
                queue.push_back(z);
            }
        }
    }
    out
}

/// Fraction of non-unsafe cells in the neighbourhood of `x`.
pub fn safety_score(spec: &GridSpec, x: usize) -> f64 {
    let hood = neighborhood(spec, x);
    let safe = hood.iter().filter(|&&y| spec.labels[y] != CellLabel::Unsafe).count();
    safe as f64 / hood.len() as f64
}

/// Multi-source breadth-first distance to the nearest goal cell.
///
/// Cells with no path carry [`UNREACHABLE`].
pub fn progress_score(spec: &GridSpec) -> Vec<f64> {
    let n = spec.num_cells();
    let mut dist = vec![UNREACHABLE; n];
    let mut queue = VecDeque::new();
    for g in spec.cells_with(CellLabel::Goal) {
        dist[g] = 0.0;
        queue.push_back(g);
    }
    while let Some(y) = queue.pop_front() {
        if spec.progress_mode == ProgressMode::AvoidUnsafe && spec.labels[y] == CellLabel::Unsafe {
            continue;
        }
        for z in spec.neighbors(y) {
            if dist[z] == UNREACHABLE {
                dist[z] = dist[y] + 1.0;
                queue.push_back(z);
            }
        }
    }
    dist
}

/// Safety/progress features of every available move:
/// `φ_u(x) = (E[s(next)], E[d_g(next)] − d_g(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFeatures {
    pub safety: Vec<f64>,
    pub progress: Vec<f64>,
    pub table: FeatureTable,
}

pub fn grid_features(spec: &GridSpec, problem: &MrpProblem) -> Result<GridFeatures> {
    let mdp = &problem.mdp;
    let n = spec.num_cells();
    if mdp.num_states() != n {
        return Err(Error::Dimension { expected: n, got: mdp.num_states() });
    }
    let safety: Vec<f64> = (0..n).map(|x| safety_score(spec, x)).collect();
    let progress = progress_score(spec);
    let mut table = FeatureTable::new(n, NUM_ACTIONS, 2);
    for x in 0..n {
        let absorbing = problem.is_goal(x) || problem.is_unsafe(x);
        for u in mdp.available_actions(x) {
            if absorbing {
                table.set_zero(x, u)?;
                continue;
            }
            let mut es = 0.0;
            let mut ed = 0.0;
            for &(y, p) in mdp.row(x, u) {
                if progress[y] == UNREACHABLE {
                    let (r, c) = spec.coords(y);
                    return Err(Error::Invalid(format!("cell ({r},{c}) has no path to a goal")));
                }
                es += p * safety[y];
                ed += p * progress[y];
            }
            table.set(x, u, &[es, ed - progress[x]])?;
        }
    }
    Ok(GridFeatures { safety, progress, table })
}

impl FeatureProvider for GridFeatures {
    fn dim(&self) -> usize {
        2
    }

    fn num_states(&self) -> usize {
        self.table.num_states()
    }

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn available(&self, x: usize, u: usize) -> bool {
        self.table.available(x, u)
    }

    fn features(&self, x: usize, u: usize) -> &[f64] {
        self.table.features(x, u)
    }
}

/// Parses the text layout: one row per line, `S` `G` `#` `.` glyphs.
pub fn load_grid(text: &str) -> Result<GridSpec> {
    let mut labels = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row: Vec<CellLabel> = line
            .chars()
            .map(|c| CellLabel::from_glyph(c).ok_or_else(|| Error::Parse { line: i + 1, msg: format!("unknown glyph {c:?}") }))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse { line: i + 1, msg: format!("row has {} cells, expected {w}", row.len()) })
            }
            _ => {}
        }
        labels.extend(row);
        height += 1;
    }
    let width = width.ok_or(Error::Parse { line: 0, msg: "empty grid".into() })?;
    GridSpec::from_labels(width, height, labels)
}

pub fn save_grid(spec: &GridSpec) -> String {
    let mut out = String::with_capacity(spec.num_cells() + spec.height);
    for r in 0..spec.height {
        for c in 0..spec.width {
            out.push(spec.labels[spec.index(r, c)].glyph());
        }
        out.push('\n');
    }
    out
}

/// Roughness sidecar: `height` lines of `width` comma-separated decimals.
pub fn save_roughness(spec: &GridSpec) -> String {
    let mut out = String::new();
    for r in 0..spec.height {
        let row: Vec<String> = (0..spec.width).map(|c| spec.roughness[spec.index(r, c)].to_string()).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn load_roughness(spec: &GridSpec, text: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut values = Vec::with_capacity(spec.num_cells());
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != spec.width {
            return Err(Error::Parse { line: i + 1, msg: format!("roughness row has {} values, expected {}", record.len(), spec.width) });
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad roughness value {field:?}") })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != spec.height {
        return Err(Error::Parse { line: rows, msg: format!("roughness has {rows} rows, expected {}", spec.height) });
    }
    Ok(values)
}

/// Built-in layouts.
pub mod fixtures {
    use super::*;

    fn blank(width: usize, height: usize) -> Vec<Vec<char>> {
        vec![vec!['.'; width]; height]
    }

    fn fill(grid: &mut [Vec<char>], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) {
        for r in rows {
            for c in cols.clone() {
                grid[r][c] = '#';
            }
        }
    }

    fn corners(grid: &mut [Vec<char>]) {
        let h = grid.len();
        let w = grid[0].len();
        grid[h - 1][0] = 'S';
        grid[0][0] = 'G';
        grid[0][w - 1] = 'G';
        grid[h - 1][w - 1] = 'G';
    }

    fn render(grid: &[Vec<char>]) -> String {
        grid.iter().map(|r| r.iter().collect::<String>() + "\n").collect()
    }

    /// 50×50 layout: start in the south-west corner, goals in the other three
    /// corners, scattered rectangular obstacles.
    pub fn grid50_layout() -> String {
        let mut g = blank(50, 50);
        fill(&mut g, 5..9, 4..14);
        fill(&mut g, 4..20, 22..26);
        fill(&mut g, 10..14, 34..46);
        fill(&mut g, 16..22, 8..12);
        fill(&mut g, 24..28, 14..30);
        fill(&mut g, 22..34, 38..42);
        fill(&mut g, 32..36, 2..10);
        fill(&mut g, 30..44, 20..23);
        fill(&mut g, 38..42, 28..40);
        fill(&mut g, 44..47, 8..16);
        fill(&mut g, 44..48, 44..46);
        corners(&mut g);
        render(&g)
    }

    /// 20×20 layout with the same three-corner-goal structure. Obstacle walls run
    /// one cell off the two border routes out of the start corner, so lateral slips
    /// on the short paths carry real risk.
    pub fn corner20_layout() -> String {
        let mut g = blank(20, 20);
        fill(&mut g, 1..18, 2..3);
        fill(&mut g, 17..18, 3..18);
        fill(&mut g, 4..6, 5..16);
        fill(&mut g, 9..11, 4..14);
        fill(&mut g, 13..15, 6..17);
        corners(&mut g);
        render(&g)
    }

    pub fn grid50(env_seed: u64) -> GridSpec {
        load_grid(&grid50_layout()).expect("built-in layout parses").with_random_roughness(env_seed)
    }

    pub fn corner20(env_seed: u64) -> GridSpec {
        load_grid(&corner20_layout()).expect("built-in layout parses").with_random_roughness(env_seed)
    }
}
