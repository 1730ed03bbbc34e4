//! Abstract simulators that turn a (training task, test task) pair into a
//! binary transfer label.
//!
//! [`CoverageSim`] models tap-based seating of grid parts: a skill is a set of
//! tap points in the normalized part frame, each tap seats every cell lying
//! entirely within `tap_radius_cm` of it, and a skill succeeds on a part when
//! the seated fraction reaches `coverage_threshold`. [`BlockSim`] is the
//! parametric surrogate for the block-insertion domain.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::task::{BlockParams, Grid, Skill, Task, CELL_CM, WORKSPACE_CM};

/// Learns skills on tasks and evaluates skills on tasks.
///
/// Both operations are deterministic functions of their arguments and the
/// simulator's configuration.
pub trait SkillSimulator: Sync {
    fn learn_skill(&self, task: &Task) -> Result<Skill>;
    fn evaluate_skill(&self, skill: &Skill, task: &Task) -> Result<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub tap_radius_cm: f64,
    /// Cap on sampled tap locations while learning.
    pub max_taps: usize,
    pub coverage_threshold: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tap_radius_cm: 3.0,
            max_taps: 2000,
            coverage_threshold: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tap_radius_cm > 0.0) {
            return Err(Error::Invalid("tap radius must be positive".into()));
        }
        if !(self.coverage_threshold > 0.0 && self.coverage_threshold <= 1.0) {
            return Err(Error::Invalid("coverage threshold must be in (0, 1]".into()));
        }
        if self.max_taps == 0 {
            return Err(Error::Invalid("max_taps must be positive".into()));
        }
        Ok(())
    }
}

/// Map a normalized tap onto `grid`, in cell units (row, col).
fn tap_position(tap: (f64, f64), grid: &Grid) -> (f64, f64) {
    (tap.0 * grid.rows() as f64, tap.1 * grid.cols() as f64)
}

/// Whether cell `(r, c)` lies entirely within `radius_cm` of `pos`.
fn cell_covered(r: usize, c: usize, pos: (f64, f64), radius_cm: f64) -> bool {
    let far = |lo: usize, p: f64| (lo as f64 - p).abs().max(((lo + 1) as f64 - p).abs()) * CELL_CM;
    let dy = far(r, pos.0);
    let dx = far(c, pos.1);
    dx * dx + dy * dy <= radius_cm * radius_cm
}

/// Occupied cells seated by a tap at `pos`, as flat grid indices.
fn tap_footprint(grid: &Grid, pos: (f64, f64), radius_cm: f64) -> Vec<usize> {
    let reach = radius_cm / CELL_CM;
    let range = |p: f64, n: usize| {
        let lo = (p - reach).floor().max(0.0) as usize;
        let hi = ((p + reach).ceil().max(0.0) as usize).min(n);
        lo..hi
    };
    let mut out = Vec::new();
    for r in range(pos.0, grid.rows()) {
        for c in range(pos.1, grid.cols()) {
            if grid.get(r, c) && cell_covered(r, c, pos, radius_cm) {
                out.push(r * grid.cols() + c);
            }
        }
    }
    out
}

/// Fraction of occupied cells seated by `taps` (normalized frame).
pub fn covered_fraction(grid: &Grid, taps: &[(f64, f64)], radius_cm: f64) -> f64 {
    let mut seated = vec![false; grid.rows() * grid.cols()];
    for &tap in taps {
        for i in tap_footprint(grid, tap_position(tap, grid), radius_cm) {
            seated[i] = true;
        }
    }
    let occupied = grid.occupied_count();
    if occupied == 0 {
        return 1.0;
    }
    seated.iter().filter(|&&v| v).count() as f64 / occupied as f64
}

#[derive(Debug, Clone, Default)]
pub struct CoverageSim {
    pub cfg: SimConfig,
}

impl CoverageSim {
    pub fn new(cfg: SimConfig) -> Self {
        CoverageSim { cfg }
    }
}

impl SkillSimulator for CoverageSim {
    /// Sample tap locations uniformly over occupied cells until the part is
    /// seated. Samples that seat nothing new are dropped as they are drawn;
    /// afterwards, taps whose removal keeps the threshold are pruned in
    /// sample order.
    fn learn_skill(&self, task: &Task) -> Result<Skill> {
        let grid = task.grid.as_ref().ok_or(Error::MissingGrid(task.id))?;
        let cfg = &self.cfg;
        let cells: Vec<(usize, usize)> = grid.occupied().collect();
        if cells.is_empty() {
            return Err(Error::Invalid(format!("task {}: empty grid", task.id)));
        }
        let mut rng = seed::rng(cfg.seed, &[seed::LEARN, task.id as u64]);
        let mut seated = vec![false; grid.rows() * grid.cols()];
        let mut n_seated = 0;
        let mut taps = Vec::new();
        let reached = |n: usize| n as f64 / cells.len() as f64 >= cfg.coverage_threshold;

        for _ in 0..cfg.max_taps {
            if reached(n_seated) {
                break;
            }
            let (r, c) = cells[rng.random_range(0..cells.len())];
            let tap = (
                (r as f64 + 0.5) / grid.rows() as f64,
                (c as f64 + 0.5) / grid.cols() as f64,
            );
            let mut fresh = 0;
            for i in tap_footprint(grid, tap_position(tap, grid), cfg.tap_radius_cm) {
                if !seated[i] {
                    seated[i] = true;
                    fresh += 1;
                }
            }
            if fresh > 0 {
                n_seated += fresh;
                taps.push(tap);
            }
        }
        if !reached(n_seated) {
            return Err(Error::CoverageUnreachable {
                task: task.id,
                samples: cfg.max_taps,
                threshold: cfg.coverage_threshold,
            });
        }

        let mut i = 0;
        while i < taps.len() && taps.len() > 1 {
            let mut rest = taps.clone();
            rest.remove(i);
            if covered_fraction(grid, &rest, cfg.tap_radius_cm) >= cfg.coverage_threshold {
                taps = rest;
            } else {
                i += 1;
            }
        }

        Ok(Skill {
            taps,
            trained_on: task.id,
            frame_size_cm: task.size_cm,
            source_features: task.features.clone(),
        })
    }

    /// Stretch the skill's taps onto the target part's bounding box (x and y
    /// independently) and check the seated fraction.
    fn evaluate_skill(&self, skill: &Skill, task: &Task) -> Result<bool> {
        let grid = task.grid.as_ref().ok_or(Error::MissingGrid(task.id))?;
        Ok(covered_fraction(grid, &skill.taps, self.cfg.tap_radius_cm) >= self.cfg.coverage_threshold)
    }
}

/// Surrogate for block insertion: a skill taught at one slot works in the
/// same environment when the true slot, observed through the noisy position
/// estimate, lies within `reach_cm` of the taught slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSim {
    pub reach_cm: f64,
    pub seed: u64,
}

impl Default for BlockSim {
    fn default() -> Self {
        BlockSim {
            reach_cm: 5.0,
            seed: 0,
        }
    }
}

fn block_params(task: &Task) -> Result<BlockParams> {
    BlockParams::decode(&task.features)
        .ok_or_else(|| Error::Invalid(format!("task {} is not a block task", task.id)))
}

impl SkillSimulator for BlockSim {
    fn learn_skill(&self, task: &Task) -> Result<Skill> {
        let p = block_params(task)?;
        Ok(Skill {
            taps: vec![(p.slot.1 / WORKSPACE_CM, p.slot.0 / WORKSPACE_CM)],
            trained_on: task.id,
            frame_size_cm: (WORKSPACE_CM, WORKSPACE_CM),
            source_features: task.features.clone(),
        })
    }

    fn evaluate_skill(&self, skill: &Skill, task: &Task) -> Result<bool> {
        let src = BlockParams::decode(&skill.source_features)
            .ok_or_else(|| Error::Invalid("skill source is not a block task".into()))?;
        let dst = block_params(task)?;
        if src.env != dst.env {
            return Ok(false);
        }
        let mut rng = seed::rng(
            self.seed,
            &[seed::EVAL, skill.trained_on as u64, task.id as u64],
        );
        let noise = Normal::new(0.0, dst.sigma).map_err(|e| Error::Invalid(e.to_string()))?;
        let dx = dst.slot.0 + noise.sample(&mut rng) - src.slot.0;
        let dy = dst.slot.1 + noise.sample(&mut rng) - src.slot.1;
        Ok(dx.hypot(dy) <= self.reach_cm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub train_id: usize,
    pub test_id: usize,
    pub train_features: Vec<f64>,
    pub test_features: Vec<f64>,
    pub label: bool,
}

impl LabeledPair {
    /// Classifier input: training-task features followed by test-task features.
    pub fn input(&self) -> Vec<f64> {
        let mut x = self.train_features.clone();
        x.extend_from_slice(&self.test_features);
        x
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<LabeledPair>,
    /// Training tasks whose skill could not be learned.
    pub skipped: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.label).count() as f64 / self.rows.len() as f64
    }

    pub fn feature_dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.train_features.len())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.feature_dim();
        let mut header = vec!["train_id".to_string(), "test_id".to_string()];
        header.extend((0..d).map(|i| format!("feat_train_{i}")));
        header.extend((0..d).map(|i| format!("feat_test_{i}")));
        header.push("label".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.train_id.to_string(), row.test_id.to_string()];
            rec.extend(row.train_features.iter().map(f64::to_string));
            rec.extend(row.test_features.iter().map(f64::to_string));
            rec.push(u8::from(row.label).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let width = r.headers()?.len();
        if width < 3 || (width - 3) % 2 != 0 {
            return Err(Error::Invalid(format!("{}: bad header width {width}", path.display())));
        }
        let d = (width - 3) / 2;
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Invalid(format!("bad number '{s}'")))
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num: Vec<f64> = rec.iter().map(parse).collect::<Result<_>>()?;
            let label = match num[width - 1] {
                0.0 => false,
                1.0 => true,
                other => return Err(Error::Invalid(format!("label {other} not binary"))),
            };
            rows.push(LabeledPair {
                train_id: num[0] as usize,
                test_id: num[1] as usize,
                train_features: num[2..2 + d].to_vec(),
                test_features: num[2 + d..2 + 2 * d].to_vec(),
                label,
            });
        }
        Ok(Dataset {
            rows,
            skipped: Vec::new(),
        })
    }
}

fn sample_indices(rng: &mut impl Rng, pool: usize, count: usize) -> Vec<usize> {
    if count <= pool {
        index::sample(rng, pool, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    }
}

/// Collect transfer labels: fix an evaluation set of `m` tasks, then for each
/// of `n` sampled training tasks learn a skill and evaluate it on every task
/// of the evaluation set.
///
/// Tasks are drawn without replacement from `pool` whenever it is large
/// enough. Training tasks whose skill cannot be learned are skipped and
/// logged.
pub fn get_training_data(
    m: usize,
    n: usize,
    pool: &[Task],
    sim: &dyn SkillSimulator,
    seed: u64,
) -> Result<Dataset> {
    if m == 0 || n == 0 {
        return Err(Error::Invalid("m and n must be >= 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::Invalid("empty task pool".into()));
    }
    let mut rng = seed::rng(seed, &[seed::DATA]);
    let eval_set = sample_indices(&mut rng, pool.len(), m);
    let train_set = sample_indices(&mut rng, pool.len(), n);

    let mut out = Dataset::default();
    for &ti in &train_set {
        let train = &pool[ti];
        let skill = match sim.learn_skill(train) {
            Ok(s) => s,
            Err(e @ Error::CoverageUnreachable { .. }) => {
                log::warn!("skipping training task {}: {e}", train.id);
                out.skipped.push(train.id);
                continue;
            }
            Err(e) => return Err(e),
        };
        for &ei in &eval_set {
            let test = &pool[ei];
            out.rows.push(LabeledPair {
                train_id: train.id,
                test_id: test.id,
                train_features: train.features.clone(),
                test_features: test.features.clone(),
                label: sim.evaluate_skill(&skill, test)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{generate_block_tasks, generate_grid_part_tasks};

    fn part(rows: &[&str]) -> Task {
        let grid = Grid::from_rows(rows).unwrap();
        let grasp = grid.occupied().next().unwrap();
        Task::grid_part(0, None, grid, grasp)
    }

    fn sim() -> CoverageSim {
        CoverageSim::new(SimConfig::default())
    }

    #[test]
    fn single_cell_needs_one_tap() {
        let skill = sim().learn_skill(&part(&["1"])).unwrap();
        assert_eq!(skill.taps, vec![(0.5, 0.5)]);
    }

    #[test]
    fn bar_needs_at_least_four_taps() {
        let t = Task::grid_part(0, None, Grid::filled(2, 20), (0, 0));
        let grid = t.grid.as_ref().unwrap();
        // Exhaustive: the best single tap position on a half-cell lattice
        // (plus off-lattice jitter) seats at most this many of the 40 cells.
        let mut best = 0;
        for r2 in 0..=8 {
            for c2 in 0..=80 {
                let pos = (r2 as f64 * 0.25, c2 as f64 * 0.25);
                best = best.max(tap_footprint(grid, pos, 3.0).len());
            }
        }
        let lower = 40_usize.div_ceil(best);
        assert!(lower >= 4, "one tap seats {best} cells");
        for seed in 0..20 {
            let s = CoverageSim::new(SimConfig {
                seed,
                ..SimConfig::default()
            });
            let skill = s.learn_skill(&t).unwrap();
            assert!(skill.taps.len() >= lower);
            assert!(s.evaluate_skill(&skill, &t).unwrap());
        }
    }

    #[test]
    fn single_tap_cannot_seat_large_square() {
        let t = part(&["111111"; 6]);
        let skill = Skill {
            taps: vec![(0.5, 0.5)],
            trained_on: 99,
            frame_size_cm: (1.0, 1.0),
            source_features: vec![],
        };
        assert!(!sim().evaluate_skill(&skill, &t).unwrap());
        // and no single tap anywhere can
        let grid = t.grid.as_ref().unwrap();
        for r in 0..=24 {
            for c in 0..=24 {
                let tap = (r as f64 / 24.0, c as f64 / 24.0);
                assert!(covered_fraction(grid, &[tap], 3.0) < 1.0);
            }
        }
    }

    #[test]
    fn learned_skill_seats_own_part() {
        let s = sim();
        for t in generate_grid_part_tasks(150, 7, 15) {
            let skill = s.learn_skill(&t).unwrap();
            assert!(!skill.taps.is_empty());
            assert!(skill
                .taps
                .iter()
                .all(|&(r, c)| (0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&c)));
            assert!(s.evaluate_skill(&skill, &t).unwrap(), "task {}", t.id);
        }
    }

    #[test]
    fn pruned_skill_has_no_redundant_tap() {
        let s = sim();
        let t = Task::grid_part(0, None, Grid::filled(9, 14), (0, 0));
        let skill = s.learn_skill(&t).unwrap();
        let grid = t.grid.as_ref().unwrap();
        for i in 0..skill.taps.len() {
            let mut rest = skill.taps.clone();
            rest.remove(i);
            assert!(covered_fraction(grid, &rest, 3.0) < 1.0);
        }
    }

    #[test]
    fn unreachable_coverage_is_reported() {
        let s = CoverageSim::new(SimConfig {
            max_taps: 1,
            ..SimConfig::default()
        });
        let t = Task::grid_part(5, None, Grid::filled(10, 10), (0, 0));
        assert!(matches!(
            s.learn_skill(&t),
            Err(Error::CoverageUnreachable { task: 5, .. })
        ));
    }

    #[test]
    fn missing_grid_is_an_error() {
        let t = generate_block_tasks(1, 0, 1).remove(0);
        assert!(matches!(sim().learn_skill(&t), Err(Error::MissingGrid(0))));
    }

    #[test]
    fn partial_threshold() {
        let s = CoverageSim::new(SimConfig {
            coverage_threshold: 0.5,
            ..SimConfig::default()
        });
        let t = Task::grid_part(0, None, Grid::filled(2, 20), (0, 0));
        let skill = s.learn_skill(&t).unwrap();
        let f = covered_fraction(t.grid.as_ref().unwrap(), &skill.taps, 3.0);
        assert!(f >= 0.5);
        assert!(skill.taps.len() <= 3);
    }

    #[test]
    fn block_skill_transfers_within_environment_only() {
        let sim = BlockSim::default();
        let tasks = generate_block_tasks(40, 3, 4);
        for t in &tasks {
            let skill = sim.learn_skill(t).unwrap();
            assert!(sim.evaluate_skill(&skill, t).unwrap());
            for u in &tasks {
                let same = t.family == u.family;
                if !same {
                    assert!(!sim.evaluate_skill(&skill, u).unwrap());
                }
            }
        }
    }

    #[test]
    fn training_data_cardinality() {
        let tasks = generate_grid_part_tasks(30, 1, 5);
        let d = get_training_data(5, 3, &tasks, &sim(), 0).unwrap();
        assert_eq!(d.len(), 15);
        let again = get_training_data(5, 3, &tasks, &sim(), 0).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn training_data_self_pair() {
        let tasks = generate_grid_part_tasks(1, 4, 1);
        let d = get_training_data(1, 1, &tasks, &sim(), 0).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.rows[0].train_id, d.rows[0].test_id);
        assert!(d.rows[0].label);
    }

    #[test]
    fn csv_round_trip() {
        let tasks = generate_grid_part_tasks(6, 2, 2);
        let d = get_training_data(3, 2, &tasks, &sim(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        let first = header.lines().next().unwrap();
        assert!(first.starts_with("train_id,test_id,feat_train_0,"));
        assert!(first.contains(",feat_train_65,feat_test_0,"));
        assert!(first.ends_with(",feat_test_65,label"));
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(back.rows, d.rows);
    }
}
