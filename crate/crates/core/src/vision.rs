//! The bounded visual system: grid discretization, foveal/peripheral encoding,
//! heuristic saliency, visit history and perfect text extraction in the fovea.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chartgen::{self, BBox, Layer, RenderedChart, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const GRID: usize = 20;
pub const CELL: usize = 16;
pub const CELLS: usize = GRID * GRID;
pub const CHANNELS: usize = 5;
pub const DEFAULT_FOVEA_RADIUS: usize = 1;

pub const SALIENCY_TEXT_WEIGHT: f64 = 0.5;
pub const SALIENCY_MARK_WEIGHT: f64 = 0.3;
pub const SALIENCY_CONTRAST_WEIGHT: f64 = 0.2;

/// Channel order inside an [`ObservationStack`].
pub const PERIPHERAL: usize = 0;
pub const FOVEAL: usize = 1;
pub const SALIENCY: usize = 2;
pub const VISITS: usize = 3;
pub const REFERENCE: usize = 4;

pub type Grid = [f64; CELLS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub col: usize,
    pub row: usize,
}

impl GridCoord {
    pub fn new(col: usize, row: usize) -> Result<Self> {
        if col >= GRID || row >= GRID {
            return Err(Error::Bounds(format!("cell ({col}, {row}) outside {GRID}x{GRID} grid")));
        }
        Ok(GridCoord { col, row })
    }

    pub const fn center() -> Self {
        GridCoord { col: GRID / 2, row: GRID / 2 }
    }

    pub fn index(self) -> usize {
        self.row * GRID + self.col
    }

    pub fn from_index(i: usize) -> Self {
        debug_assert!(i < CELLS);
        GridCoord { col: i % GRID, row: i / GRID }
    }

    pub fn distance(self, other: GridCoord) -> f64 {
        let dc = self.col as f64 - other.col as f64;
        let dr = self.row as f64 - other.row as f64;
        (dc * dc + dr * dr).sqrt()
    }

    pub fn chebyshev(self, other: GridCoord) -> usize {
        self.col.abs_diff(other.col).max(self.row.abs_diff(other.row))
    }

    pub fn patch(self) -> BBox {
        let (x, y) = ((self.col * CELL) as i32, (self.row * CELL) as i32);
        BBox::new(x, y, x + CELL as i32, y + CELL as i32)
    }

    /// Pixel region seen by a fovea of `radius` cells centred here, clipped to the image.
    pub fn fovea(self, radius: usize) -> BBox {
        let c0 = self.col.saturating_sub(radius);
        let r0 = self.row.saturating_sub(radius);
        let c1 = (self.col + radius + 1).min(GRID);
        let r1 = (self.row + radius + 1).min(GRID);
        BBox::new((c0 * CELL) as i32, (r0 * CELL) as i32, (c1 * CELL) as i32, (r1 * CELL) as i32)
    }
}

impl std::fmt::Display for GridCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

pub fn to_cell(pixel: (i32, i32)) -> Result<GridCoord> {
    let (x, y) = pixel;
    if x < 0 || y < 0 || x >= IMAGE_SIZE as i32 || y >= IMAGE_SIZE as i32 {
        return Err(Error::Bounds(format!("pixel ({x}, {y}) outside {IMAGE_SIZE}x{IMAGE_SIZE} image")));
    }
    Ok(GridCoord { col: x as usize / CELL, row: y as usize / CELL })
}

/// Uniform pixel inside the cell's 16x16 patch.
pub fn sample_pixel_with<R: Rng + ?Sized>(cell: GridCoord, rng: &mut R) -> Result<(i32, i32)> {
    GridCoord::new(cell.col, cell.row)?;
    let x = cell.col * CELL + rng.gen_range(0..CELL);
    let y = cell.row * CELL + rng.gen_range(0..CELL);
    Ok((x as i32, y as i32))
}

pub fn sample_pixel(cell: GridCoord, seed: u64) -> Result<(i32, i32)> {
    sample_pixel_with(cell, &mut rng_from(seed, &[0x5A4D]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitHistory {
    pub counts: [u32; CELLS],
}

impl Default for VisitHistory {
    fn default() -> Self {
        VisitHistory { counts: [0; CELLS] }
    }
}

impl VisitHistory {
    pub fn visit(&mut self, cell: GridCoord) {
        self.counts[cell.index()] += 1;
    }

    pub fn count(&self, cell: GridCoord) -> u32 {
        self.counts[cell.index()]
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack {
    /// Channel-major values, `CHANNELS * CELLS` entries.
    pub data: Vec<f64>,
}

impl ObservationStack {
    pub fn channel(&self, k: usize) -> &[f64] {
        &self.data[k * CELLS..(k + 1) * CELLS]
    }
}

/// Per-chart quantities that do not change during an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub peripheral: Grid,
    pub saliency: Grid,
}

impl Scene {
    pub fn new(chart: &RenderedChart) -> Self {
        Scene { peripheral: peripheral(chart), saliency: compute_saliency(chart) }
    }
}

fn cell_pixels(cell: GridCoord) -> impl Iterator<Item = usize> {
    let (x0, y0) = (cell.col * CELL, cell.row * CELL);
    (y0..y0 + CELL).flat_map(move |y| (x0..x0 + CELL).map(move |x| y * IMAGE_SIZE + x))
}

/// Mean luminance of every patch, scaled to [0, 1].
pub fn peripheral(chart: &RenderedChart) -> Grid {
    let mut out = [0.0; CELLS];
    for (i, v) in out.iter_mut().enumerate() {
        let sum: u32 = cell_pixels(GridCoord::from_index(i)).map(|p| chart.pixels[p] as u32).sum();
        *v = sum as f64 / (CELL * CELL) as f64 / 255.0;
    }
    out
}

/// Task-independent saliency: text ink, mark ink and local contrast (max - min
/// luminance) per cell. Each feature map is scaled to its own chart-wide
/// maximum before the weighted sum, and the sum is normalized so the maximum
/// is 1 (all zeros for a blank chart).
pub fn compute_saliency(chart: &RenderedChart) -> Grid {
    let mut maps = [[0.0; CELLS]; 3];
    for i in 0..CELLS {
        let (mut text, mut mark) = (0usize, 0usize);
        let (mut lo, mut hi) = (u8::MAX, u8::MIN);
        for p in cell_pixels(GridCoord::from_index(i)) {
            match chart.layers[p] {
                Layer::Text => text += 1,
                Layer::Mark => mark += 1,
                _ => {}
            }
            lo = lo.min(chart.pixels[p]);
            hi = hi.max(chart.pixels[p]);
        }
        maps[0][i] = text as f64;
        maps[1][i] = mark as f64;
        maps[2][i] = (hi - lo) as f64;
    }
    let weights = [SALIENCY_TEXT_WEIGHT, SALIENCY_MARK_WEIGHT, SALIENCY_CONTRAST_WEIGHT];
    let mut out = [0.0; CELLS];
    for (map, w) in maps.iter().zip(weights) {
        let max = map.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            out.iter_mut().zip(map).for_each(|(o, v)| *o += w * v / max);
        }
    }
    let max = out.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    out
}

pub fn observe(
    scene: &Scene,
    fixation: GridCoord,
    history: &VisitHistory,
    reference: Option<GridCoord>,
    fovea_radius: usize,
) -> ObservationStack {
    let mut data = vec![0.0; CHANNELS * CELLS];
    data[PERIPHERAL * CELLS..(PERIPHERAL + 1) * CELLS].copy_from_slice(&scene.peripheral);
    data[SALIENCY * CELLS..(SALIENCY + 1) * CELLS].copy_from_slice(&scene.saliency);
    for i in 0..CELLS {
        let cell = GridCoord::from_index(i);
        if cell.chebyshev(fixation) <= fovea_radius {
            data[FOVEAL * CELLS + i] = scene.peripheral[i];
        }
        data[VISITS * CELLS + i] = history.counts[i].min(1) as f64;
    }
    match reference {
        Some(r) => data[REFERENCE * CELLS + r.index()] = 1.0,
        None => data[REFERENCE * CELLS..].iter_mut().for_each(|v| *v = 1.0 / CELLS as f64),
    }
    ObservationStack { data }
}

/// Texts of every text-bearing AOI whose box intersects the fovea, in AOI order.
pub fn read_text(chart: &RenderedChart, fixation: GridCoord, fovea_radius: usize) -> Vec<(String, GridCoord)> {
    let fovea = fixation.fovea(fovea_radius);
    chart
        .aois
        .iter()
        .filter(|a| a.bbox.intersects(&fovea))
        .filter_map(|a| {
            let text = a.text.as_ref()?;
            Some((text.clone(), bbox_cell(&a.bbox)))
        })
        .collect()
}

/// Cell holding the centre of a box (clamped into the grid).
pub fn bbox_cell(b: &BBox) -> GridCoord {
    let (x, y) = b.center();
    let clamp = |v: i32| (v.max(0) as usize / CELL).min(GRID - 1);
    GridCoord { col: clamp(x), row: clamp(y) }
}

/// Writes a grid as an 8-bit PGM, each cell upscaled to a 16x16 block.
pub fn write_grid_pgm(grid: &Grid, path: &Path) -> Result<()> {
    let mut px = vec![0u8; IMAGE_SIZE * IMAGE_SIZE];
    for (i, v) in grid.iter().enumerate() {
        let level = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        for p in cell_pixels(GridCoord::from_index(i)) {
            px[p] = level;
        }
    }
    chartgen::write_pgm(path, IMAGE_SIZE, IMAGE_SIZE, &px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chartgen::{render, ChartSpec, Datum, Orientation, Style};

    fn chart(value_labels: bool) -> RenderedChart {
        let spec = ChartSpec {
            chart_id: "v".into(),
            orientation: Orientation::Horizontal,
            title: "Votes by Team".into(),
            category_axis_label: "Team".into(),
            value_axis_label: "Votes".into(),
            data: ["Alpha", "Bravo", "Delta"]
                .iter()
                .zip([40.0, 100.0, 60.0])
                .map(|(l, v)| Datum { category_label: l.to_string(), value: v })
                .collect(),
            value_axis_max: 100.0,
            tick_step: 20.0,
            style: Style { bar_color_intensity: 100, background_intensity: 250, value_labels },
        };
        render(&spec).unwrap()
    }

    #[test]
    fn to_cell_floor_divides() {
        assert_eq!(to_cell((160, 160)).unwrap(), GridCoord { col: 10, row: 10 });
        assert_eq!(to_cell((15, 16)).unwrap(), GridCoord { col: 0, row: 1 });
        assert!(matches!(to_cell((320, 3)), Err(Error::Bounds(_))));
        assert!(matches!(to_cell((-1, 3)), Err(Error::Bounds(_))));
    }

    #[test]
    fn sample_pixel_stays_in_patch() {
        for seed in 0..50 {
            let (x, y) = sample_pixel(GridCoord { col: 0, row: 0 }, seed).unwrap();
            assert!((0..16).contains(&x) && (0..16).contains(&y));
        }
        assert!(sample_pixel(GridCoord { col: 20, row: 0 }, 1).is_err());
    }

    #[test]
    fn foveal_support_is_three_by_three() {
        let c = chart(false);
        let scene = Scene::new(&c);
        let obs = observe(&scene, GridCoord::center(), &VisitHistory::default(), None, 1);
        let fov = obs.channel(FOVEAL);
        for i in 0..CELLS {
            let inside = GridCoord::from_index(i).chebyshev(GridCoord::center()) <= 1;
            assert_eq!(fov[i] != 0.0, inside, "cell {i}");
        }
        let reference: f64 = obs.channel(REFERENCE).iter().sum();
        assert!((reference - 1.0).abs() < 1e-12);
        assert!(obs.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn reference_is_one_hot() {
        let c = chart(false);
        let scene = Scene::new(&c);
        let r = GridCoord { col: 3, row: 7 };
        let obs = observe(&scene, r, &VisitHistory::default(), Some(r), 1);
        let ch = obs.channel(REFERENCE);
        assert_eq!(ch.iter().sum::<f64>(), 1.0);
        assert_eq!(ch[r.index()], 1.0);
    }

    #[test]
    fn blank_chart_has_constant_peripheral_and_zero_saliency() {
        let mut c = chart(false);
        c.pixels.iter_mut().for_each(|p| *p = 200);
        c.layers.iter_mut().for_each(|l| *l = Layer::Background);
        let p = peripheral(&c);
        assert!(p.iter().all(|v| (*v - 200.0 / 255.0).abs() < 1e-12));
        assert!(compute_saliency(&c).iter().all(|v| *v == 0.0));
    }

    /// Independent scan: per-cell raw features straight from pixel coordinates,
    /// each map scaled to its maximum, weighted, summed (not yet normalized).
    fn oracle_saliency(c: &RenderedChart) -> Vec<f64> {
        let mut raw = vec![[0.0f64; 3]; CELLS];
        for (i, f) in raw.iter_mut().enumerate() {
            let (col, row) = (i % 20, i / 20);
            let (mut lo, mut hi) = (255.0f64, 0.0f64);
            for y in row * 16..row * 16 + 16 {
                for x in col * 16..col * 16 + 16 {
                    let k = y * 320 + x;
                    f[0] += (c.layers[k] == Layer::Text) as u8 as f64;
                    f[1] += (c.layers[k] == Layer::Mark) as u8 as f64;
                    lo = lo.min(c.pixels[k] as f64);
                    hi = hi.max(c.pixels[k] as f64);
                }
            }
            f[2] = hi - lo;
        }
        let max: Vec<f64> = (0..3).map(|k| raw.iter().map(|f| f[k]).fold(0.0, f64::max)).collect();
        let w = [0.5, 0.3, 0.2];
        raw.iter()
            .map(|f| (0..3).map(|k| if max[k] > 0.0 { w[k] * f[k] / max[k] } else { 0.0 }).sum())
            .collect()
    }

    #[test]
    fn bar_interior_scores_mark_term_only() {
        let c = chart(false);
        let mark = c.mark_of(1).unwrap().bbox;
        let interior = (0..CELLS)
            .map(GridCoord::from_index)
            .find(|cell| {
                let p = cell.patch();
                p.x0 >= mark.x0 && p.x1 <= mark.x1 && p.y0 >= mark.y0 && p.y1 <= mark.y1
            })
            .expect("a cell fully inside the longest bar");
        let sal = compute_saliency(&c);
        assert_eq!(sal[GridCoord::from_index(0).index()], 0.0);
        let unnorm = oracle_saliency(&c);
        // full mark coverage, no text, flat luminance: only the mark weight remains
        assert!((unnorm[interior.index()] - SALIENCY_MARK_WEIGHT).abs() < 1e-12);
    }

    #[test]
    fn saliency_matches_oracle_and_peaks_on_text() {
        for value_labels in [false, true] {
            let c = chart(value_labels);
            let sal = compute_saliency(&c);
            let oracle = oracle_saliency(&c);
            let peak = oracle.iter().cloned().fold(0.0, f64::max);
            for i in 0..CELLS {
                assert!((sal[i] - oracle[i] / peak).abs() < 1e-12, "cell {i}");
            }
            let best = (0..CELLS).max_by(|a, b| sal[*a].partial_cmp(&sal[*b]).unwrap()).unwrap();
            assert!(cell_pixels(GridCoord::from_index(best)).any(|p| c.layers[p] == Layer::Text));
        }
    }

    #[test]
    fn read_text_on_title_and_blank() {
        let c = chart(false);
        let title = c.aoi("title").unwrap();
        let cell = bbox_cell(&title.bbox);
        let found = read_text(&c, cell, 1);
        assert!(found.contains(&(title.text.clone().unwrap(), cell)));
        // top-right corner holds nothing
        assert!(read_text(&c, GridCoord { col: 19, row: 0 }, 0).is_empty());
    }

    #[test]
    fn read_text_returns_both_ticks_between_them() {
        let c = chart(false);
        let t0 = c.aoi("tick-1").unwrap().bbox;
        let t1 = c.aoi("tick-2").unwrap().bbox;
        let mid = to_cell(((t0.x1 + t1.x0) / 2, (t0.y0 + t0.y1) / 2)).unwrap();
        let fovea = mid.fovea(1);
        assert!(fovea.intersects(&t0) && fovea.intersects(&t1));
        let texts: Vec<String> = read_text(&c, mid, 1).into_iter().map(|(t, _)| t).collect();
        assert!(texts.contains(&"20".to_string()) && texts.contains(&"40".to_string()));
    }
}
