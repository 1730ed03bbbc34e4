//! Tasks, per-task costs, learned skills and the synthetic task domains.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::SkillSimulator;
use crate::error::{Error, Result};
use crate::seed;

/// Side length of one grid cell.
pub const CELL_CM: f64 = 1.0;
/// Resolution of the pooled occupancy image in the feature vector.
pub const POOL: usize = 8;
/// Feature dimension of grid-part tasks: pooled image plus (width, height).
pub const GRID_FEATURE_DIM: usize = POOL * POOL + 2;
/// Largest part extent, in cells.
pub const MAX_PART_CELLS: usize = 20;

/// Block-domain workspace edge length.
pub const WORKSPACE_CM: f64 = 20.0;
pub const SLOT_MARGIN_CM: f64 = 2.0;
/// Standard deviation of the slot-position estimate.
pub const SLOT_NOISE_CM: f64 = 0.3;
pub const BLOCK_SIZE_CM: (f64, f64) = (3.0, 3.0);

/// Per-task action costs, in effort units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    pub c_rob: f64,
    pub c_hum: f64,
    pub c_demo: f64,
    pub c_fail: f64,
}

impl Default for CostVector {
    fn default() -> Self {
        CostVector {
            c_rob: 10.0,
            c_hum: 100.0,
            c_demo: 200.0,
            c_fail: 100.0,
        }
    }
}

impl CostVector {
    pub fn new(c_rob: f64, c_hum: f64, c_demo: f64, c_fail: f64) -> Self {
        CostVector {
            c_rob,
            c_hum,
            c_demo,
            c_fail,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_rob", self.c_rob),
            ("c_hum", self.c_hum),
            ("c_demo", self.c_demo),
            ("c_fail", self.c_fail),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        CostVector {
            c_rob: self.c_rob * lambda,
            c_hum: self.c_hum * lambda,
            c_demo: self.c_demo * lambda,
            c_fail: self.c_fail * lambda,
        }
    }
}

/// Binary occupancy matrix, one cell per [`CELL_CM`].
///
/// Serialized as a list of row strings over `{0, 1}`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            cells: vec![true; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        Grid::try_from(rows.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.cols + c] = v;
    }

    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i / self.cols, i % self.cols))
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v).count()
    }

    /// Part extent as (width, height) in centimeters.
    pub fn size_cm(&self) -> (f64, f64) {
        (self.cols as f64 * CELL_CM, self.rows as f64 * CELL_CM)
    }

    /// Crop to the bounding box of occupied cells. `None` if empty.
    pub fn cropped(&self) -> Option<Grid> {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for (r, c) in self.occupied() {
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        if r0 == usize::MAX {
            return None;
        }
        let mut out = Grid::new(r1 - r0 + 1, c1 - c0 + 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                out.set(r - r0, c - c0, self.get(r, c));
            }
        }
        Some(out)
    }

    /// Nearest-neighbour resample to `rows x cols`.
    pub fn resampled(&self, rows: usize, cols: usize) -> Grid {
        let mut out = Grid::new(rows, cols);
        for r in 0..rows {
            let sr = ((2 * r + 1) * self.rows) / (2 * rows);
            for c in 0..cols {
                let sc = ((2 * c + 1) * self.cols) / (2 * cols);
                out.set(r, c, self.get(sr, sc));
            }
        }
        out
    }

    /// Replicate each cell into a `factor x factor` block.
    pub fn upscaled(&self, factor: usize) -> Grid {
        let mut out = Grid::new(self.rows * factor, self.cols * factor);
        for (r, c) in self.occupied() {
            for dr in 0..factor {
                for dc in 0..factor {
                    out.set(r * factor + dr, c * factor + dc, true);
                }
            }
        }
        out
    }

    /// Max-pool onto a [`POOL`]x[`POOL`] image, flattened row-major.
    ///
    /// A source cell spans `[r, r+1)` which maps onto `[r*8/rows, (r+1)*8/rows)`
    /// in pooled coordinates; every pooled cell that interval touches is set.
    pub fn pooled(&self) -> Vec<f64> {
        let span = |i: usize, n: usize| {
            let lo = i * POOL / n;
            let hi = ((i + 1) * POOL).div_ceil(n) - 1;
            lo..=hi
        };
        let mut out = vec![0.0; POOL * POOL];
        for (r, c) in self.occupied() {
            for pr in span(r, self.rows) {
                for pc in span(c, self.cols) {
                    out[pr * POOL + pc] = 1.0;
                }
            }
        }
        out
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Grid {}x{}", self.rows, self.cols)?;
        for row in Vec::<String>::from(self.clone()) {
            writeln!(f, "  {row}")?;
        }
        Ok(())
    }
}

impl From<Grid> for Vec<String> {
    fn from(g: Grid) -> Self {
        (0..g.rows)
            .map(|r| {
                (0..g.cols)
                    .map(|c| if g.get(r, c) { '1' } else { '0' })
                    .collect()
            })
            .collect()
    }
}

impl TryFrom<Vec<String>> for Grid {
    type Error = Error;

    fn try_from(rows: Vec<String>) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || cols == 0 {
            return Err(Error::Invalid("grid must be nonempty".into()));
        }
        let mut g = Grid::new(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Invalid(format!("grid row {r} has ragged length")));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => g.set(r, c, true),
                    other => return Err(Error::Invalid(format!("grid cell '{other}'"))),
                }
            }
        }
        Ok(g)
    }
}

/// Pure feature map of a grid-part task.
pub fn grid_features(grid: &Grid, size_cm: (f64, f64)) -> Vec<f64> {
    let mut f = grid.pooled();
    f.push(size_cm.0);
    f.push(size_cm.1);
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    /// Shape family (grid parts) or environment (blocks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<usize>,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    #[serde(rename = "grasp", default, skip_serializing_if = "Option::is_none")]
    pub grasp_cell: Option<(usize, usize)>,
    pub size_cm: (f64, f64),
    #[serde(default)]
    pub costs: CostVector,
}

impl Task {
    pub fn grid_part(id: usize, family: Option<usize>, grid: Grid, grasp: (usize, usize)) -> Self {
        let size_cm = grid.size_cm();
        Task {
            id,
            family,
            features: grid_features(&grid, size_cm),
            grid: Some(grid),
            grasp_cell: Some(grasp),
            size_cm,
            costs: CostVector::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size_cm.0 > 0.0 && self.size_cm.1 > 0.0) {
            return Err(Error::Invalid(format!("task {}: size must be positive", self.id)));
        }
        if let Some(grid) = &self.grid {
            if grid.occupied_count() == 0 {
                return Err(Error::Invalid(format!("task {}: empty grid", self.id)));
            }
            if let Some((r, c)) = self.grasp_cell {
                if r >= grid.rows() || c >= grid.cols() || !grid.get(r, c) {
                    return Err(Error::Invalid(format!(
                        "task {}: grasp cell not on the part",
                        self.id
                    )));
                }
            }
        }
        self.costs.validate()
    }
}

/// Block-domain task parameters decoded from a feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockParams {
    pub env: usize,
    pub slot: (f64, f64),
    pub sigma: f64,
}

impl BlockParams {
    pub fn decode(features: &[f64]) -> Option<Self> {
        let envs = features.len().checked_sub(3)?;
        let env = features[..envs].iter().position(|&v| v == 1.0)?;
        Some(BlockParams {
            env,
            slot: (features[envs], features[envs + 1]),
            sigma: features[envs + 2],
        })
    }
}

fn random_shape(rng: &mut impl Rng) -> Grid {
    let w = rng.random_range(2..=12usize);
    let h = rng.random_range(2..=12usize);
    let mut g = Grid::new(h, w);
    // Horizontal spine across the full width, then one or two full-height
    // uprights crossing it: L, T, plus, U and plain bar shapes.
    let sh = rng.random_range(1..=h.div_ceil(2));
    let s0 = rng.random_range(0..=h - sh);
    for r in s0..s0 + sh {
        for c in 0..w {
            g.set(r, c, true);
        }
    }
    for _ in 0..rng.random_range(1..=2) {
        let uw = rng.random_range(1..=w.div_ceil(2));
        let u0 = rng.random_range(0..=w - uw);
        for r in 0..h {
            for c in u0..u0 + uw {
                g.set(r, c, true);
            }
        }
    }
    g
}

fn perturbed(base: &Grid, rng: &mut impl Rng) -> Grid {
    let scale = |n: usize, rng: &mut dyn rand::RngCore| {
        let s: f64 = rng.random_range(0.75..=1.25);
        ((n as f64 * s).round() as usize).clamp(1, MAX_PART_CELLS)
    };
    let rows = scale(base.rows(), rng);
    let cols = scale(base.cols(), rng);
    base.resampled(rows, cols)
        .cropped()
        .unwrap_or_else(|| base.clone())
}

/// Synthetic grid-part tasks: `shape_family_count` random rectilinear shapes,
/// each instantiated several times with independent size perturbations and
/// grasp locations. Tasks are ordered family-major.
pub fn generate_grid_part_tasks(count: usize, seed: u64, shape_family_count: usize) -> Vec<Task> {
    let mut rng = seed::rng(seed, &[seed::DOMAIN, 1]);
    let families: Vec<Grid> = (0..shape_family_count)
        .map(|_| random_shape(&mut rng))
        .collect();
    let mut first_of_family = vec![true; shape_family_count];
    (0..count)
        .map(|id| {
            let family = id * shape_family_count / count;
            let grid = if std::mem::take(&mut first_of_family[family]) {
                families[family].clone()
            } else {
                perturbed(&families[family], &mut rng)
            };
            let cells: Vec<_> = grid.occupied().collect();
            let grasp = cells[rng.random_range(0..cells.len())];
            Task::grid_part(id, Some(family), grid, grasp)
        })
        .collect()
}

/// Parametric block-insertion tasks: environment one-hot, slot position and
/// slot-estimate noise.
pub fn generate_block_tasks(count: usize, seed: u64, env_count: usize) -> Vec<Task> {
    let mut rng = seed::rng(seed, &[seed::DOMAIN, 2]);
    let lo = SLOT_MARGIN_CM;
    let hi = WORKSPACE_CM - SLOT_MARGIN_CM;
    (0..count)
        .map(|id| {
            let env = id % env_count;
            let x = rng.random_range(lo..=hi);
            let y = rng.random_range(lo..=hi);
            let mut features = vec![0.0; env_count];
            features[env] = 1.0;
            features.extend([x, y, SLOT_NOISE_CM]);
            Task {
                id,
                family: Some(env),
                features,
                grid: None,
                grasp_cell: None,
                size_cm: BLOCK_SIZE_CM,
                costs: CostVector::default(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    /// Tap points as (row, col) in the part frame normalized to `[0,1]^2`.
    pub taps: Vec<(f64, f64)>,
    pub trained_on: usize,
    pub frame_size_cm: (f64, f64),
    /// Features of the training task; the precondition model is queried with these.
    pub source_features: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillLibrary {
    pub skills: Vec<Skill>,
    pub provenance: Vec<usize>,
}

impl SkillLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    /// Add a skill. Returns `false` (and leaves the library unchanged) if a
    /// skill trained on the same task is already present.
    pub fn insert(&mut self, skill: Skill) -> bool {
        if self.provenance.contains(&skill.trained_on) {
            return false;
        }
        self.provenance.push(skill.trained_on);
        self.skills.push(skill);
        true
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let lib: SkillLibrary = read_json(path)?;
        if lib.skills.len() != lib.provenance.len()
            || lib.skills.iter().zip(&lib.provenance).any(|(s, &p)| s.trained_on != p)
        {
            return Err(Error::Invalid(format!(
                "{}: provenance does not match skills",
                path.display()
            )));
        }
        Ok(lib)
    }
}

/// Number of extra draws allowed beyond `k` when pretraining.
pub const PRETRAIN_RETRY_LIMIT: usize = 32;

/// Teach `k` skills on distinct tasks drawn uniformly without replacement.
///
/// Draws follow a single seeded permutation of `tasks`, so the provenance of a
/// `k`-skill library is a prefix of the `k+1`-skill library's.
pub fn pretrain_library(
    tasks: &[Task],
    k: usize,
    seed: u64,
    sim: &dyn SkillSimulator,
) -> Result<SkillLibrary> {
    if k > tasks.len() {
        return Err(Error::Invalid(format!(
            "cannot pretrain {k} skills from {} tasks",
            tasks.len()
        )));
    }
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut seed::rng(seed, &[seed::PRETRAIN]));

    let mut lib = SkillLibrary::new();
    let mut attempts = 0;
    for &i in &order {
        if lib.len() == k {
            break;
        }
        if attempts >= k + PRETRAIN_RETRY_LIMIT {
            break;
        }
        attempts += 1;
        match sim.learn_skill(&tasks[i]) {
            Ok(skill) => {
                lib.insert(skill);
            }
            Err(e) => log::warn!("pretraining: skipping task {}: {e}", tasks[i].id),
        }
    }
    if lib.len() < k {
        return Err(Error::Pretraining {
            requested: k,
            learned: lib.len(),
            attempts,
        });
    }
    Ok(lib)
}

pub fn save_tasks(tasks: &[Task], path: &Path) -> Result<()> {
    write_json(tasks, path)
}

pub fn load_tasks(path: &Path) -> Result<Vec<Task>> {
    let tasks: Vec<Task> = read_json(path)?;
    let dim = tasks.first().map(|t| t.features.len());
    for t in &tasks {
        t.validate()?;
        if Some(t.features.len()) != dim {
            return Err(Error::DimensionMismatch {
                expected: dim.unwrap_or(0),
                actual: t.features.len(),
            });
        }
    }
    Ok(tasks)
}

pub(crate) fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
