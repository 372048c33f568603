//! Procedural bar-chart specifications and their deterministic rasterization.
//!
//! Charts are 320x320 grayscale images with a fixed layout: a title strip on
//! top, a plot region with bars, a category axis with one label per bar and
//! a value axis with ticks at multiples of the tick step. Every drawn element
//! is reported as an [`Aoi`] whose box is derived from the same font metrics
//! used for drawing.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::font;
use crate::rng::rng_from;

pub const IMAGE_SIZE: usize = 320;
pub const MIN_CATEGORIES: usize = 2;
pub const MAX_CATEGORIES: usize = 12;

const MARGIN: usize = 8;
const TITLE_SCALE: usize = 2;
const AXIS_TITLE_SCALE: usize = 1;
const TICK_LEN: usize = 4;
const AXIS_THICKNESS: usize = 2;
const PLOT_TOP: usize = 48;
const MIN_PLOT_SPAN: usize = 120;
const BAR_FILL: f64 = 0.6;
const MIN_BAR_THICKNESS: usize = 4;
const MAX_BAR_THICKNESS: usize = 28;
const INK: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datum {
    pub category_label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub bar_color_intensity: u8,
    pub background_intensity: u8,
    /// Draw each bar's value as text at its end.
    #[serde(default)]
    pub value_labels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub chart_id: String,
    pub orientation: Orientation,
    pub title: String,
    pub category_axis_label: String,
    pub value_axis_label: String,
    pub data: Vec<Datum>,
    pub value_axis_max: f64,
    pub tick_step: f64,
    pub style: Style,
}

impl ChartSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.data.len();
        if !(MIN_CATEGORIES..=MAX_CATEGORIES).contains(&n) {
            return Err(Error::Validation(format!(
                "chart must have {MIN_CATEGORIES}..={MAX_CATEGORIES} categories, got {n}"
            )));
        }
        for (i, d) in self.data.iter().enumerate() {
            if d.category_label.trim().is_empty() {
                return Err(Error::Validation(format!("category {i} has an empty label")));
            }
            if !d.value.is_finite() || d.value < 0.0 {
                return Err(Error::Validation(format!(
                    "category {:?} has invalid value {}",
                    d.category_label, d.value
                )));
            }
            if self.data[..i]
                .iter()
                .any(|o| o.category_label == d.category_label)
            {
                return Err(Error::Validation(format!(
                    "duplicate category label {:?}",
                    d.category_label
                )));
            }
        }
        if !(self.tick_step > 0.0 && self.tick_step.is_finite()) {
            return Err(Error::Validation("tick_step must be positive".into()));
        }
        let max_value = self.data.iter().map(|d| d.value).fold(0.0, f64::max);
        if !(self.value_axis_max >= max_value && self.value_axis_max > 0.0) {
            return Err(Error::Validation(format!(
                "value_axis_max {} below data maximum {max_value}",
                self.value_axis_max
            )));
        }
        if self.tick_count().is_none() {
            return Err(Error::Validation(format!(
                "tick_step {} does not divide value_axis_max {}",
                self.tick_step, self.value_axis_max
            )));
        }
        let texts = [&self.title, &self.category_axis_label, &self.value_axis_label];
        for text in texts
            .into_iter()
            .chain(self.data.iter().map(|d| &d.category_label))
        {
            if let Some(ch) = text.chars().find(|c| !font::supports(*c)) {
                return Err(Error::Validation(format!(
                    "unsupported character {ch:?} in {text:?}"
                )));
            }
        }
        Ok(())
    }

    /// Number of tick intervals, if `tick_step` divides the axis evenly.
    pub fn tick_count(&self) -> Option<usize> {
        let k = self.value_axis_max / self.tick_step;
        let r = k.round();
        ((k - r).abs() < 1e-9 && r >= 1.0 && r <= 1000.0).then_some(r as usize)
    }

    pub fn tick_values(&self) -> Vec<f64> {
        let k = self.tick_count().unwrap_or(0);
        (0..=k).map(|i| i as f64 * self.tick_step).collect()
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.data
            .iter()
            .position(|d| d.category_label.eq_ignore_ascii_case(label.trim()))
    }
}

/// Formats a chart value the way it is printed on the chart.
pub fn format_value(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AoiKind {
    Title,
    Mark,
    CategoryLabel,
    ValueTick,
    AxisLine,
    /// Text naming an axis.
    AxisTitle,
    ValueLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Title,
    Mark,
    Axis,
}

impl AoiKind {
    pub fn region(self) -> Region {
        match self {
            AoiKind::Title => Region::Title,
            AoiKind::Mark | AoiKind::ValueLabel => Region::Mark,
            AoiKind::CategoryLabel | AoiKind::ValueTick | AoiKind::AxisLine | AoiKind::AxisTitle => {
                Region::Axis
            }
        }
    }
}

/// Integer pixel rectangle, inclusive of `(x0, y0)` and exclusive of `(x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 4]", into = "[i32; 4]")]
pub struct BBox {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl From<[i32; 4]> for BBox {
    fn from(v: [i32; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [i32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub const fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> i32 {
        (self.x1 - self.x0).max(0)
    }

    pub fn height(&self) -> i32 {
        (self.y1 - self.y0).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && self.x0 < other.x1
            && other.x0 < self.x1
            && self.y0 < other.y1
            && other.y0 < self.y1
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    /// Center in pixel coordinates, rounded down.
    pub fn center(&self) -> (i32, i32) {
        ((self.x0 + self.x1 - 1).max(self.x0 * 2) / 2, (self.y0 + self.y1 - 1).max(self.y0 * 2) / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aoi {
    pub aoi_id: String,
    pub kind: AoiKind,
    pub bbox: BBox,
    pub text: Option<String>,
    pub datum_index: Option<usize>,
}

impl Aoi {
    pub fn region(&self) -> Region {
        self.kind.region()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Background,
    Text,
    Mark,
    Axis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedChart {
    pub spec: ChartSpec,
    /// Row-major grayscale intensities, `IMAGE_SIZE * IMAGE_SIZE` entries.
    pub pixels: Vec<u8>,
    /// Which element kind last painted each pixel; parallel to `pixels`.
    pub layers: Vec<Layer>,
    pub aois: Vec<Aoi>,
    pub original_size: (u32, u32),
}

impl RenderedChart {
    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * IMAGE_SIZE + x]
    }

    pub fn with_original_size(mut self, size: (u32, u32)) -> Result<Self> {
        if size.0 == 0 || size.1 == 0 {
            return Err(Error::Parameter("original size must be positive".into()));
        }
        self.original_size = size;
        Ok(self)
    }

    pub fn aoi(&self, id: &str) -> Option<&Aoi> {
        self.aois.iter().find(|a| a.aoi_id == id)
    }

    pub fn mark_of(&self, datum: usize) -> Option<&Aoi> {
        self.aois
            .iter()
            .find(|a| a.kind == AoiKind::Mark && a.datum_index == Some(datum))
    }

    pub fn label_of(&self, datum: usize) -> Option<&Aoi> {
        self.aois
            .iter()
            .find(|a| a.kind == AoiKind::CategoryLabel && a.datum_index == Some(datum))
    }

    pub fn value_label_of(&self, datum: usize) -> Option<&Aoi> {
        self.aois
            .iter()
            .find(|a| a.kind == AoiKind::ValueLabel && a.datum_index == Some(datum))
    }

    pub fn ticks(&self) -> impl Iterator<Item = &Aoi> {
        self.aois.iter().filter(|a| a.kind == AoiKind::ValueTick)
    }

    /// The tick whose value is closest to `value`; ties go to the lower tick.
    pub fn nearest_tick(&self, value: f64) -> Option<&Aoi> {
        let step = self.spec.tick_step;
        self.ticks().min_by(|a, b| {
            let da = (tick_value(a, step) - value).abs();
            let db = (tick_value(b, step) - value).abs();
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
        })
    }

    /// Pixel just inside the far end of a bar (its tip).
    pub fn mark_tip(&self, datum: usize) -> Option<(i32, i32)> {
        let mark = self.mark_of(datum)?;
        let b = mark.bbox;
        Some(match self.spec.orientation {
            Orientation::Horizontal => ((b.x1 - 1).max(b.x0), (b.y0 + b.y1) / 2),
            Orientation::Vertical => ((b.x0 + b.x1) / 2, b.y0.min(b.y1 - 1).max(b.y0)),
        })
    }

    /// Writes the image as binary PGM (P5).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, IMAGE_SIZE, IMAGE_SIZE, &self.pixels)
    }

    pub fn write_aoi_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.aois)?;
        crate::write_atomic(path, json.as_bytes())
    }
}

fn tick_value(aoi: &Aoi, step: f64) -> f64 {
    aoi.datum_index.map(|k| k as f64 * step).unwrap_or(f64::NAN)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    crate::write_atomic(path, &buf)
}

/// Parses a binary PGM (P5) image.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse("pgm header", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::parse("pgm header", "expected P5 with maxval 255"));
    }
    let w: usize = fields[1].parse().map_err(|_| Error::parse("pgm header", "bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| Error::parse("pgm header", "bad height"))?;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| Error::parse("pgm body", "truncated"))?;
    Ok((w, h, data.to_vec()))
}

// ---------------------------------------------------------------------------
// Generation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationChoice {
    Horizontal,
    Vertical,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    /// Inclusive range of category counts.
    pub categories: (usize, usize),
    /// Inclusive range of data values; values are drawn as integers.
    pub values: (f64, f64),
    /// Inclusive range of tick interval counts along the value axis.
    pub ticks: (usize, usize),
    pub words: Vec<String>,
    pub measures: Vec<String>,
    pub groups: Vec<String>,
    pub orientation: OrientationChoice,
    /// Round data values to multiples of the tick step.
    pub snap_to_ticks: bool,
    pub value_labels: bool,
}

const DEFAULT_WORDS: &[&str] = &[
    "Apple", "Banana", "Cherry", "Grape", "Lemon", "Mango", "Melon", "Peach", "Pear", "Plum",
    "Kiwi", "Lime", "Oslo", "Paris", "Rome", "Berlin", "Madrid", "Vienna", "Dublin", "Prague",
    "Lisbon", "Athens", "Tokyo", "Lima", "Cairo", "Delhi", "Quito", "Seoul", "Hanoi", "Riga",
    "Alpha", "Bravo", "Delta", "Echo", "Gamma", "Omega", "Sigma", "Tango", "Zulu", "Nova",
];
const DEFAULT_MEASURES: &[&str] = &[
    "Sales", "Revenue", "Visitors", "Output", "Score", "Profit", "Votes", "Users", "Orders",
];
const DEFAULT_GROUPS: &[&str] = &["Item", "City", "Team", "Region", "Brand", "Store", "Site"];

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            categories: (3, 10),
            values: (5.0, 100.0),
            ticks: (4, 8),
            words: DEFAULT_WORDS.iter().map(|s| s.to_string()).collect(),
            measures: DEFAULT_MEASURES.iter().map(|s| s.to_string()).collect(),
            groups: DEFAULT_GROUPS.iter().map(|s| s.to_string()).collect(),
            orientation: OrientationChoice::Horizontal,
            snap_to_ticks: true,
            value_labels: false,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let (cmin, cmax) = self.categories;
        if cmin > cmax || cmin < MIN_CATEGORIES || cmax > MAX_CATEGORIES {
            return Err(Error::Parameter(format!(
                "category range [{cmin}, {cmax}] must be non-empty within [{MIN_CATEGORIES}, {MAX_CATEGORIES}]"
            )));
        }
        let (vmin, vmax) = self.values;
        if !(vmin.is_finite() && vmax.is_finite()) || vmin < 0.0 || vmin > vmax || vmax <= 0.0 {
            return Err(Error::Parameter(format!("value range [{vmin}, {vmax}] is invalid")));
        }
        if vmin.ceil() > vmax.floor() {
            return Err(Error::Parameter(format!(
                "value range [{vmin}, {vmax}] contains no integer"
            )));
        }
        let (tmin, tmax) = self.ticks;
        if tmin == 0 || tmin > tmax {
            return Err(Error::Parameter(format!("tick range [{tmin}, {tmax}] is invalid")));
        }
        let distinct: std::collections::BTreeSet<&str> =
            self.words.iter().map(|w| w.trim()).filter(|w| !w.is_empty()).collect();
        if distinct.len() < cmax {
            return Err(Error::Parameter(format!(
                "word list has {} distinct words, need at least {cmax}",
                distinct.len()
            )));
        }
        if self.measures.is_empty() || self.groups.is_empty() {
            return Err(Error::Parameter("measure and group word lists must be non-empty".into()));
        }
        Ok(())
    }
}

/// Smallest step of the form {1, 2, 5} x 10^e (e >= 0) that is >= `raw`.
fn nice_step(raw: f64) -> f64 {
    let mut base = 1.0;
    loop {
        for m in [1.0, 2.0, 5.0] {
            if m * base >= raw - 1e-9 {
                return m * base;
            }
        }
        base *= 10.0;
    }
}

pub fn generate_spec(seed: u64, params: &GenParams) -> Result<ChartSpec> {
    params.validate()?;
    let mut rng = rng_from(seed, &[0xC4A2]);
    let n = rng.gen_range(params.categories.0..=params.categories.1);

    let mut words: Vec<String> = params
        .words
        .iter()
        .map(|w| w.trim().to_string())
        .filter(|w| !w.is_empty())
        .collect();
    words.sort();
    words.dedup();
    words.shuffle(&mut rng);
    let labels: Vec<String> = words.into_iter().take(n).collect();

    let lo = params.values.0.ceil() as i64;
    let hi = params.values.1.floor() as i64;
    let mut values: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi) as f64).collect();
    let max_value = values.iter().cloned().fold(0.0, f64::max).max(1.0);

    let intervals = rng.gen_range(params.ticks.0..=params.ticks.1);
    let tick_step = nice_step(max_value / intervals as f64);
    let value_axis_max = tick_step * (max_value / tick_step - 1e-9).ceil().max(1.0);
    if params.snap_to_ticks {
        for v in values.iter_mut() {
            let snapped = (*v / tick_step).round() * tick_step;
            *v = if snapped == 0.0 && *v > 0.0 { tick_step } else { snapped.min(value_axis_max) };
        }
    }

    let orientation = match params.orientation {
        OrientationChoice::Horizontal => Orientation::Horizontal,
        OrientationChoice::Vertical => Orientation::Vertical,
        OrientationChoice::Mixed => {
            if rng.gen_bool(0.5) {
                Orientation::Horizontal
            } else {
                Orientation::Vertical
            }
        }
    };
    let measure = params.measures.choose(&mut rng).cloned().unwrap_or_default();
    let group = params.groups.choose(&mut rng).cloned().unwrap_or_default();
    let background = rng.gen_range(225..=255u8);
    let bar = rng.gen_range(70..=150u8);

    let spec = ChartSpec {
        chart_id: format!("chart-{seed:016x}"),
        orientation,
        title: format!("{measure} by {group}"),
        category_axis_label: group,
        value_axis_label: measure,
        data: labels
            .into_iter()
            .zip(values)
            .map(|(category_label, value)| Datum { category_label, value })
            .collect(),
        value_axis_max,
        tick_step,
        style: Style {
            bar_color_intensity: bar,
            background_intensity: background,
            value_labels: params.value_labels,
        },
    };
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Rendering

struct Canvas {
    pixels: Vec<u8>,
    layers: Vec<Layer>,
}

impl Canvas {
    fn new(fill: u8) -> Self {
        Canvas {
            pixels: vec![fill; IMAGE_SIZE * IMAGE_SIZE],
            layers: vec![Layer::Background; IMAGE_SIZE * IMAGE_SIZE],
        }
    }

    fn fill_rect(&mut self, b: BBox, value: u8, layer: Layer) {
        for y in b.y0.max(0)..b.y1.min(IMAGE_SIZE as i32) {
            for x in b.x0.max(0)..b.x1.min(IMAGE_SIZE as i32) {
                let i = y as usize * IMAGE_SIZE + x as usize;
                self.pixels[i] = value;
                self.layers[i] = layer;
            }
        }
    }

    fn text(&mut self, text: &str, x0: i32, y0: i32, scale: usize, value: u8) -> BBox {
        let (w, h) = font::text_extent(text, scale);
        let bbox = BBox::new(x0, y0, x0 + w as i32, y0 + h as i32);
        debug_assert!(in_image(&bbox), "text {text:?} at {bbox:?} leaves the image");
        font::for_each_ink_pixel(text, x0 as usize, y0 as usize, scale, |x, y| {
            self.pixels[y * IMAGE_SIZE + x] = value;
            self.layers[y * IMAGE_SIZE + x] = Layer::Text;
        });
        bbox
    }
}

fn in_image(b: &BBox) -> bool {
    b.x0 >= 0 && b.y0 >= 0 && b.x1 <= IMAGE_SIZE as i32 && b.y1 <= IMAGE_SIZE as i32
}

fn text_width(text: &str, scale: usize) -> usize {
    font::text_extent(text, scale).0
}

/// Resolved geometry shared by both orientations.
struct Layout {
    scale: usize,
    plot: BBox,
}

fn layout_error(spec: &ChartSpec, why: &str) -> Error {
    Error::Layout(format!("chart {}: {why}", spec.chart_id))
}

fn horizontal_layout(spec: &ChartSpec, ticks: &[String]) -> Result<Layout> {
    let n = spec.data.len();
    let mut last = String::from("no label scale fits");
    for scale in [2usize, 1] {
        let max_label = spec.data.iter().map(|d| text_width(&d.category_label, scale)).max().unwrap_or(0);
        let max_tick = ticks.iter().map(|t| text_width(t, scale)).max().unwrap_or(0);
        let last_tick = ticks.last().map(|t| text_width(t, scale)).unwrap_or(0);
        let plot_left = MARGIN + max_label + 6;
        let plot_right = IMAGE_SIZE - MARGIN - last_tick.div_ceil(2) - 1;
        let plot_bottom = IMAGE_SIZE - MARGIN - 7 * AXIS_TITLE_SCALE - 4 - 7 * scale - 2 - TICK_LEN - AXIS_THICKNESS;
        if plot_right < plot_left + MIN_PLOT_SPAN {
            last = format!("category labels {max_label}px wide leave no room for the plot");
            continue;
        }
        let slot = (plot_bottom - PLOT_TOP) as f64 / n as f64;
        if (7 * scale) as f64 > slot - 2.0 {
            last = format!("{n} category labels do not fit vertically");
            continue;
        }
        let spacing = (plot_right - plot_left) as f64 / (ticks.len() - 1) as f64;
        if (max_tick + 4) as f64 > spacing {
            last = "tick labels overlap".into();
            continue;
        }
        if plot_left < max_tick.div_ceil(2) {
            last = "first tick label leaves the image".into();
            continue;
        }
        return Ok(Layout {
            scale,
            plot: BBox::new(plot_left as i32, PLOT_TOP as i32, plot_right as i32, plot_bottom as i32),
        });
    }
    Err(layout_error(spec, &last))
}

fn vertical_layout(spec: &ChartSpec, ticks: &[String]) -> Result<Layout> {
    let n = spec.data.len();
    let mut last = String::from("no label scale fits");
    for scale in [2usize, 1] {
        let max_label = spec.data.iter().map(|d| text_width(&d.category_label, scale)).max().unwrap_or(0);
        let max_tick = ticks.iter().map(|t| text_width(t, scale)).max().unwrap_or(0);
        let plot_left = MARGIN + max_tick + 2 + TICK_LEN + AXIS_THICKNESS + 2;
        let plot_right = IMAGE_SIZE - MARGIN;
        let plot_bottom = IMAGE_SIZE - MARGIN - 7 * AXIS_TITLE_SCALE - 4 - 7 * scale - 4;
        if plot_right < plot_left + MIN_PLOT_SPAN {
            last = "tick labels leave no room for the plot".into();
            continue;
        }
        let slot = (plot_right - plot_left) as f64 / n as f64;
        if (max_label + 2) as f64 > slot {
            last = format!("category labels {max_label}px wide exceed {slot:.1}px slots");
            continue;
        }
        let spacing = (plot_bottom - PLOT_TOP) as f64 / (ticks.len() - 1) as f64;
        if (7 * scale + 2) as f64 > spacing {
            last = "tick labels overlap".into();
            continue;
        }
        return Ok(Layout {
            scale,
            plot: BBox::new(plot_left as i32, PLOT_TOP as i32, plot_right as i32, plot_bottom as i32),
        });
    }
    Err(layout_error(spec, &last))
}

fn bar_length(value: f64, max: f64, span: i32) -> i32 {
    (value / max * span as f64).round() as i32
}

fn bar_thickness(slot: f64) -> i32 {
    ((slot * BAR_FILL).round() as usize).clamp(MIN_BAR_THICKNESS, MAX_BAR_THICKNESS) as i32
}

/// Rasterizes a chart. Pure: the same spec always yields identical pixels and AOIs.
pub fn render(spec: &ChartSpec) -> Result<RenderedChart> {
    spec.validate()?;
    let tick_texts: Vec<String> = spec.tick_values().into_iter().map(format_value).collect();
    let layout = match spec.orientation {
        Orientation::Horizontal => horizontal_layout(spec, &tick_texts)?,
        Orientation::Vertical => vertical_layout(spec, &tick_texts)?,
    };
    let (title_w, _) = font::text_extent(&spec.title, TITLE_SCALE);
    if title_w > IMAGE_SIZE - 2 * MARGIN {
        return Err(layout_error(spec, "title too long"));
    }
    for (label, what) in [
        (&spec.category_axis_label, "category axis label"),
        (&spec.value_axis_label, "value axis label"),
    ] {
        if text_width(label, AXIS_TITLE_SCALE) > IMAGE_SIZE - 2 * MARGIN {
            return Err(layout_error(spec, &format!("{what} too long")));
        }
    }

    let bg = spec.style.background_intensity;
    let bar_ink = spec.style.bar_color_intensity;
    let mut canvas = Canvas::new(bg);
    let mut aois = Vec::new();
    let s = layout.scale;
    let plot = layout.plot;
    let n = spec.data.len();

    let title_box = canvas.text(
        &spec.title,
        ((IMAGE_SIZE - title_w) / 2) as i32,
        MARGIN as i32,
        TITLE_SCALE,
        INK,
    );
    aois.push(Aoi {
        aoi_id: "title".into(),
        kind: AoiKind::Title,
        bbox: title_box,
        text: Some(spec.title.clone()),
        datum_index: None,
    });

    let push_axis_title = |canvas: &mut Canvas, aois: &mut Vec<Aoi>, id: &str, text: &str, x0: i32, y0: i32| {
        if text.is_empty() {
            return;
        }
        let bbox = canvas.text(text, x0, y0, AXIS_TITLE_SCALE, INK);
        aois.push(Aoi {
            aoi_id: id.into(),
            kind: AoiKind::AxisTitle,
            bbox,
            text: Some(text.to_string()),
            datum_index: None,
        });
    };
    let bottom_title_y = (IMAGE_SIZE - MARGIN - 7 * AXIS_TITLE_SCALE) as i32;

    match spec.orientation {
        Orientation::Horizontal => {
            let span = plot.x1 - plot.x0;
            let slot = (plot.y1 - plot.y0) as f64 / n as f64;
            let thick = bar_thickness(slot);
            push_axis_title(&mut canvas, &mut aois, "axis-title-category", &spec.category_axis_label, MARGIN as i32, 32);
            let vw = text_width(&spec.value_axis_label, AXIS_TITLE_SCALE) as i32;
            let vx = ((plot.x0 + plot.x1 - vw) / 2).clamp(MARGIN as i32, IMAGE_SIZE as i32 - MARGIN as i32 - vw);
            push_axis_title(&mut canvas, &mut aois, "axis-title-value", &spec.value_axis_label, vx, bottom_title_y);

            let value_axis = BBox::new(plot.x0 - AXIS_THICKNESS as i32, plot.y1, plot.x1 + 1, plot.y1 + AXIS_THICKNESS as i32);
            let category_axis = BBox::new(plot.x0 - AXIS_THICKNESS as i32, plot.y0, plot.x0, plot.y1 + AXIS_THICKNESS as i32);

            for (i, d) in spec.data.iter().enumerate() {
                let center = plot.y0 as f64 + (i as f64 + 0.5) * slot;
                let y0 = (center - thick as f64 / 2.0).round() as i32;
                let len = bar_length(d.value, spec.value_axis_max, span);
                let mark = BBox::new(plot.x0, y0, plot.x0 + len, y0 + thick);
                canvas.fill_rect(mark, bar_ink, Layer::Mark);
                aois.push(Aoi {
                    aoi_id: format!("mark-{i}"),
                    kind: AoiKind::Mark,
                    bbox: mark,
                    text: None,
                    datum_index: Some(i),
                });
                let (lw, lh) = font::text_extent(&d.category_label, s);
                let ly = (center - lh as f64 / 2.0).round() as i32;
                let label = canvas.text(&d.category_label, plot.x0 - 5 - lw as i32, ly, s, INK);
                aois.push(Aoi {
                    aoi_id: format!("category-{i}"),
                    kind: AoiKind::CategoryLabel,
                    bbox: label,
                    text: Some(d.category_label.clone()),
                    datum_index: Some(i),
                });
                if spec.style.value_labels {
                    let text = format_value(d.value);
                    let (tw, th) = font::text_extent(&text, 1);
                    let ty = (center - th as f64 / 2.0).round() as i32;
                    let (tx, ink) = if len >= tw as i32 + 6 && thick >= th as i32 {
                        (plot.x0 + len - 3 - tw as i32, bg)
                    } else {
                        (plot.x0 + len + 3, INK)
                    };
                    let bbox = canvas.text(&text, tx, ty, 1, ink);
                    aois.push(Aoi {
                        aoi_id: format!("value-label-{i}"),
                        kind: AoiKind::ValueLabel,
                        bbox,
                        text: Some(text),
                        datum_index: Some(i),
                    });
                }
            }
            canvas.fill_rect(value_axis, INK, Layer::Axis);
            canvas.fill_rect(category_axis, INK, Layer::Axis);
            for (k, text) in tick_texts.iter().enumerate() {
                let x = plot.x0 + bar_length(k as f64 * spec.tick_step, spec.value_axis_max, span);
                let mark = BBox::new(x, value_axis.y1, x + 1, value_axis.y1 + TICK_LEN as i32);
                canvas.fill_rect(mark, INK, Layer::Axis);
                let tw = text_width(text, s) as i32;
                let label = canvas.text(text, x - tw / 2, mark.y1 + 2, s, INK);
                aois.push(Aoi {
                    aoi_id: format!("tick-{k}"),
                    kind: AoiKind::ValueTick,
                    bbox: mark.union(&label),
                    text: Some(text.clone()),
                    datum_index: Some(k),
                });
            }
            aois.push(axis_aoi("axis-value", value_axis));
            aois.push(axis_aoi("axis-category", category_axis));
        }
        Orientation::Vertical => {
            let span = plot.y1 - plot.y0;
            let slot = (plot.x1 - plot.x0) as f64 / n as f64;
            let thick = bar_thickness(slot);
            push_axis_title(&mut canvas, &mut aois, "axis-title-value", &spec.value_axis_label, MARGIN as i32, 30);
            let cw = text_width(&spec.category_axis_label, AXIS_TITLE_SCALE) as i32;
            let cx = ((plot.x0 + plot.x1 - cw) / 2).clamp(MARGIN as i32, IMAGE_SIZE as i32 - MARGIN as i32 - cw);
            push_axis_title(&mut canvas, &mut aois, "axis-title-category", &spec.category_axis_label, cx, bottom_title_y);

            let value_axis = BBox::new(plot.x0 - AXIS_THICKNESS as i32, plot.y0, plot.x0, plot.y1 + AXIS_THICKNESS as i32);
            let category_axis = BBox::new(plot.x0 - AXIS_THICKNESS as i32, plot.y1, plot.x1, plot.y1 + AXIS_THICKNESS as i32);

            for (i, d) in spec.data.iter().enumerate() {
                let center = plot.x0 as f64 + (i as f64 + 0.5) * slot;
                let x0 = (center - thick as f64 / 2.0).round() as i32;
                let len = bar_length(d.value, spec.value_axis_max, span);
                let mark = BBox::new(x0, plot.y1 - len, x0 + thick, plot.y1);
                canvas.fill_rect(mark, bar_ink, Layer::Mark);
                aois.push(Aoi {
                    aoi_id: format!("mark-{i}"),
                    kind: AoiKind::Mark,
                    bbox: mark,
                    text: None,
                    datum_index: Some(i),
                });
                let lw = text_width(&d.category_label, s) as i32;
                let lx = (center - lw as f64 / 2.0).round() as i32;
                let label = canvas.text(&d.category_label, lx, category_axis.y1 + 4, s, INK);
                aois.push(Aoi {
                    aoi_id: format!("category-{i}"),
                    kind: AoiKind::CategoryLabel,
                    bbox: label,
                    text: Some(d.category_label.clone()),
                    datum_index: Some(i),
                });
                if spec.style.value_labels {
                    let text = format_value(d.value);
                    let (tw, th) = font::text_extent(&text, 1);
                    let tx = (center - tw as f64 / 2.0).round() as i32;
                    let (ty, ink) = if tw as i32 + 2 <= thick && len >= th as i32 + 6 {
                        (plot.y1 - len + 3, bg)
                    } else {
                        (plot.y1 - len - 3 - th as i32, INK)
                    };
                    let bbox = canvas.text(&text, tx, ty, 1, ink);
                    aois.push(Aoi {
                        aoi_id: format!("value-label-{i}"),
                        kind: AoiKind::ValueLabel,
                        bbox,
                        text: Some(text),
                        datum_index: Some(i),
                    });
                }
            }
            canvas.fill_rect(value_axis, INK, Layer::Axis);
            canvas.fill_rect(category_axis, INK, Layer::Axis);
            for (k, text) in tick_texts.iter().enumerate() {
                let y = plot.y1 - bar_length(k as f64 * spec.tick_step, spec.value_axis_max, span);
                let mark = BBox::new(value_axis.x0 - TICK_LEN as i32, y, value_axis.x0, y + 1);
                canvas.fill_rect(mark, INK, Layer::Axis);
                let (tw, th) = font::text_extent(text, s);
                let label = canvas.text(text, mark.x0 - 2 - tw as i32, y - th as i32 / 2, s, INK);
                aois.push(Aoi {
                    aoi_id: format!("tick-{k}"),
                    kind: AoiKind::ValueTick,
                    bbox: mark.union(&label),
                    text: Some(text.clone()),
                    datum_index: Some(k),
                });
            }
            aois.push(axis_aoi("axis-value", value_axis));
            aois.push(axis_aoi("axis-category", category_axis));
        }
    }

    if let Some(bad) = aois.iter().find(|a| !in_image(&a.bbox)) {
        return Err(layout_error(spec, &format!("{} falls outside the image", bad.aoi_id)));
    }
    Ok(RenderedChart {
        spec: spec.clone(),
        pixels: canvas.pixels,
        layers: canvas.layers,
        aois,
        original_size: (IMAGE_SIZE as u32, IMAGE_SIZE as u32),
    })
}

fn axis_aoi(id: &str, bbox: BBox) -> Aoi {
    Aoi {
        aoi_id: id.into(),
        kind: AoiKind::AxisLine,
        bbox,
        text: None,
        datum_index: None,
    }
}

/// Smallest-area AOI containing `point`; earlier AOIs win exact area ties.
pub fn aoi_at(chart: &RenderedChart, point: (i32, i32)) -> Result<Option<&Aoi>> {
    let (x, y) = point;
    if x < 0 || y < 0 || x >= IMAGE_SIZE as i32 || y >= IMAGE_SIZE as i32 {
        return Err(Error::Bounds(format!("point ({x}, {y}) outside {IMAGE_SIZE}x{IMAGE_SIZE} image")));
    }
    Ok(chart
        .aois
        .iter()
        .filter(|a| a.bbox.contains(x, y))
        .fold(None, |best: Option<&Aoi>, a| match best {
            Some(b) if b.bbox.area() <= a.bbox.area() => Some(b),
            _ => Some(a),
        }))
}
