//! Hyperrectangle decomposition of the null parameter region.
//!
//! The parameter box is cut into axis-aligned tiles, each carrying the
//! subset of null hypotheses that hold everywhere on it (its *config*). A
//! tile whose interior crosses a hypothesis boundary is split at the
//! boundary during construction, so configs are always well defined; tiles
//! on which no hypothesis holds are dropped, since no Type I Error can occur
//! there. Tiles store their face coordinates directly: a split child's face
//! *is* the threshold bit-for-bit, so side-of-boundary tests are exact and
//! never cascade. Construction and refinement are fully deterministic; ties
//! break by tile order and lowest axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Enumerating 2^d corners is the only exponential step in the pipeline;
/// beyond this many axes a vertex list is certainly a bug upstream.
pub const VERTEX_DIM_LIMIT: usize = 20;

/// Configs are stored per tile and also consumed as bit masks.
pub const MAX_HYPOTHESES: usize = 64;

/// One-sided threshold null on a single axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Null holds where theta[axis] <= threshold.
    Leq,
    /// Null holds where theta[axis] >= threshold.
    Geq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullHypothesis {
    pub axis: usize,
    pub threshold: f64,
    pub direction: Direction,
}

impl NullHypothesis {
    /// Whether the null holds on [lo, hi]: `Some(true)` / `Some(false)` when
    /// the interval lies entirely on one side (touching the threshold
    /// counts as on it), `None` when its interior straddles.
    fn classify(&self, lo: f64, hi: f64) -> Option<bool> {
        match self.direction {
            Direction::Leq => {
                if hi <= self.threshold {
                    Some(true)
                } else if lo >= self.threshold {
                    Some(false)
                } else {
                    None
                }
            }
            Direction::Geq => {
                if lo >= self.threshold {
                    Some(true)
                } else if hi <= self.threshold {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }
}

/// An axis-aligned box [lower, upper] with its hypothesis config and
/// simulation budget. Equal bounds on every axis describe a single-point
/// tile (useful for pointwise calibration); the builder only ever produces
/// positive extents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// config[j] = hypothesis j is true everywhere on this tile.
    pub config: Vec<bool>,
    /// Where the tile is simulated; construction uses the center.
    pub sim_point: Vec<f64>,
    pub sim_count: u64,
}

fn center_of(lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower
        .iter()
        .zip(upper)
        .map(|(&lo, &hi)| lo + (hi - lo) / 2.0)
        .collect()
}

impl Tile {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        config: Vec<bool>,
        sim_count: u64,
    ) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::Empty("tile bounds"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (&lo, &hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("bad tile interval [{lo}, {hi}]")));
            }
        }
        if sim_count == 0 {
            return Err(Error::invalid("tile needs at least one simulation"));
        }
        let sim_point = center_of(&lower, &upper);
        Ok(Tile {
            lower,
            upper,
            config,
            sim_point,
            sim_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((&t, &lo), &hi)| t >= lo && t <= hi)
    }

    /// The 2^d corner points, ordered lexicographically by face pattern with
    /// the last axis varying fastest (all-lower first, all-upper last).
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        if d > VERTEX_DIM_LIMIT {
            return Err(Error::TooManyAxes {
                dim: d,
                limit: VERTEX_DIM_LIMIT,
            });
        }
        let mut out = Vec::with_capacity(1 << d);
        for pattern in 0u32..(1u32 << d) {
            let corner = (0..d)
                .map(|axis| {
                    if (pattern >> (d - 1 - axis)) & 1 == 1 {
                        self.upper[axis]
                    } else {
                        self.lower[axis]
                    }
                })
                .collect();
            out.push(corner);
        }
        Ok(out)
    }

    /// Corner displacements measured from the simulation point; this is the
    /// vertex list the tilt bound needs.
    pub fn vertex_displacements(&self) -> Result<Vec<Vec<f64>>> {
        let mut corners = self.vertices()?;
        for corner in &mut corners {
            for (x, s) in corner.iter_mut().zip(&self.sim_point) {
                *x -= s;
            }
        }
        Ok(corners)
    }

    /// Config as a bit mask (bit j = hypothesis j true on the tile).
    pub fn config_mask(&self) -> u64 {
        self.config
            .iter()
            .enumerate()
            .fold(0u64, |m, (j, &b)| if b { m | (1 << j) } else { m })
    }

    fn widest_axis(&self) -> usize {
        let mut best = (0usize, f64::NEG_INFINITY);
        for axis in 0..self.dim() {
            let w = self.width(axis);
            if w > best.1 {
                best = (axis, w);
            }
        }
        best.0
    }

    /// Split into halves at `cut` on `axis` (the shared face is exactly
    /// `cut`), each re-simulated at its own center.
    fn split_at(&self, axis: usize, cut: f64, sim_count: u64) -> (Tile, Tile) {
        let mut below = self.clone();
        let mut above = self.clone();
        below.upper[axis] = cut;
        above.lower[axis] = cut;
        for child in [&mut below, &mut above] {
            child.sim_point = center_of(&child.lower, &child.upper);
            child.sim_count = sim_count;
        }
        (below, above)
    }
}

/// The full tiling: bounds, hypotheses, and the kept tiles in build order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platten {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub hypotheses: Vec<NullHypothesis>,
    pub tiles: Vec<Tile>,
}

impl Platten {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn total_sims(&self) -> u64 {
        self.tiles.iter().map(|t| t.sim_count).sum()
    }

    pub fn volume(&self) -> f64 {
        self.tiles.iter().map(Tile::volume).sum()
    }

    /// Indices of tiles containing theta (several on shared faces).
    pub fn tiles_containing<'a>(
        &'a self,
        theta: &'a [f64],
    ) -> impl Iterator<Item = usize> + 'a {
        self.tiles
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.contains(theta))
            .map(|(i, _)| i)
    }
}

/// Determine a tile's config, erroring if its interior straddles any
/// hypothesis boundary.
pub fn assign_config(
    lower: &[f64],
    upper: &[f64],
    hypotheses: &[NullHypothesis],
) -> Result<Vec<bool>> {
    let mut config = Vec::with_capacity(hypotheses.len());
    for hyp in hypotheses {
        if hyp.axis >= lower.len() {
            return Err(Error::invalid(format!(
                "hypothesis axis {} outside dimension {}",
                hyp.axis,
                lower.len()
            )));
        }
        match hyp.classify(lower[hyp.axis], upper[hyp.axis]) {
            Some(b) => config.push(b),
            None => {
                return Err(Error::StraddlingTile {
                    axis: hyp.axis,
                    threshold: hyp.threshold,
                })
            }
        }
    }
    Ok(config)
}

/// Split a tile at every hypothesis boundary its interior crosses,
/// depth-first with lower halves first, so the output order is canonical.
/// Terminates because each child's face equals the threshold exactly.
fn split_on_hypotheses(tile: Tile, hypotheses: &[NullHypothesis]) -> Vec<Tile> {
    for hyp in hypotheses {
        if hyp
            .classify(tile.lower[hyp.axis], tile.upper[hyp.axis])
            .is_none()
        {
            let (below, above) = tile.split_at(hyp.axis, hyp.threshold, tile.sim_count);
            let mut out = split_on_hypotheses(below, hypotheses);
            out.extend(split_on_hypotheses(above, hypotheses));
            return out;
        }
    }
    vec![tile]
}

/// Build a uniform tiling of [lower, upper], split tiles at hypothesis
/// boundaries, assign configs, and drop tiles where no hypothesis holds.
/// Cells are emitted in row-major order (last axis fastest).
pub fn build_platten(
    lower: &[f64],
    upper: &[f64],
    cells_per_axis: &[usize],
    hypotheses: &[NullHypothesis],
    sim_count: u64,
) -> Result<Platten> {
    let d = lower.len();
    if d == 0 {
        return Err(Error::Empty("parameter bounds"));
    }
    if upper.len() != d || cells_per_axis.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: upper.len().max(cells_per_axis.len()),
        });
    }
    for axis in 0..d {
        if !(lower[axis].is_finite() && upper[axis].is_finite() && lower[axis] < upper[axis]) {
            return Err(Error::invalid(format!(
                "bounds on axis {axis} must satisfy lower < upper"
            )));
        }
        if cells_per_axis[axis] == 0 {
            return Err(Error::invalid(format!("axis {axis} needs at least one cell")));
        }
    }
    if hypotheses.len() > MAX_HYPOTHESES {
        return Err(Error::invalid(format!(
            "at most {MAX_HYPOTHESES} hypotheses supported"
        )));
    }
    for hyp in hypotheses {
        if hyp.axis >= d {
            return Err(Error::invalid(format!(
                "hypothesis axis {} outside dimension {d}",
                hyp.axis
            )));
        }
        if !hyp.threshold.is_finite() {
            return Err(Error::invalid("non-finite hypothesis threshold"));
        }
    }
    if sim_count == 0 {
        return Err(Error::invalid("sim_count must be positive"));
    }

    let widths: Vec<f64> = (0..d)
        .map(|axis| (upper[axis] - lower[axis]) / cells_per_axis[axis] as f64)
        .collect();
    // Face idx of axis: both neighbors compute the same expression, so the
    // grid has no cracks; the outermost faces are the box bounds themselves.
    let face = |axis: usize, idx: usize| -> f64 {
        if idx == 0 {
            lower[axis]
        } else if idx == cells_per_axis[axis] {
            upper[axis]
        } else {
            lower[axis] + idx as f64 * widths[axis]
        }
    };

    let mut tiles = Vec::new();
    let total: usize = cells_per_axis.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        let mut cell_lower = vec![0.0; d];
        let mut cell_upper = vec![0.0; d];
        for axis in (0..d).rev() {
            let idx = rem % cells_per_axis[axis];
            rem /= cells_per_axis[axis];
            cell_lower[axis] = face(axis, idx);
            cell_upper[axis] = face(axis, idx + 1);
        }
        let cell = Tile::new(cell_lower, cell_upper, Vec::new(), sim_count)?;
        for mut piece in split_on_hypotheses(cell, hypotheses) {
            let config = assign_config(&piece.lower, &piece.upper, hypotheses)?;
            if config.iter().any(|&b| b) {
                piece.config = config;
                tiles.push(piece);
            }
        }
    }

    Ok(Platten {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        hypotheses: hypotheses.to_vec(),
        tiles,
    })
}

/// Bisect the `budget` highest-scoring tiles along their widest axis (lowest
/// axis wins width ties; lower tile index wins score ties). Children replace
/// their parent in place, lower half first, keep the parent's config, are
/// re-simulated at their own centers, and get ceil(parent * sim_growth)
/// simulations.
pub fn refine(platten: &Platten, scores: &[f64], budget: usize, sim_growth: f64) -> Result<Platten> {
    if scores.len() != platten.tiles.len() {
        return Err(Error::DimensionMismatch {
            expected: platten.tiles.len(),
            got: scores.len(),
        });
    }
    if !(sim_growth.is_finite() && sim_growth > 0.0) {
        return Err(Error::invalid(format!("sim_growth {sim_growth} must be positive")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let chosen: std::collections::BTreeSet<usize> =
        order.into_iter().take(budget).collect();

    let mut tiles = Vec::with_capacity(platten.tiles.len() + chosen.len());
    for (idx, tile) in platten.tiles.iter().enumerate() {
        if !chosen.contains(&idx) {
            tiles.push(tile.clone());
            continue;
        }
        let child_sims = ((tile.sim_count as f64 * sim_growth).ceil() as u64).max(1);
        let axis = tile.widest_axis();
        let cut = tile.lower[axis] + tile.width(axis) / 2.0;
        let (below, above) = tile.split_at(axis, cut, child_sims);
        // Children of a non-straddling tile cannot straddle, but running
        // them through the splitter keeps that a structural guarantee
        // rather than an assumption.
        for child in [below, above] {
            for mut piece in split_on_hypotheses(child, &platten.hypotheses) {
                piece.config = assign_config(&piece.lower, &piece.upper, &platten.hypotheses)?;
                tiles.push(piece);
            }
        }
    }

    Ok(Platten {
        lower: platten.lower.clone(),
        upper: platten.upper.clone(),
        hypotheses: platten.hypotheses.clone(),
        tiles,
    })
}
