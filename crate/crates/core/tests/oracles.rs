//! Hand-computed and independently recomputed values for the metric and
//! baseline code.

use chartgaze::chartgen::{generate_spec, render, GenParams, Region, RenderedChart, IMAGE_SIZE};
use chartgaze::metrics::{
    dtw, leave_one_out, levenshtein, mean_best, sequence_score_letters, summary_stats, GridPartition,
};
use chartgaze::rng::rng_from;
use chartgaze::simulator::{baseline_center, baseline_random, baseline_saliency, Scanpath};
use chartgaze::taskgen::{generate_task, TaskKind};
use chartgaze::vision::{to_cell, Scene, CELLS};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn path(points: &[[f64; 2]]) -> Scanpath {
    Scanpath {
        chart_id: "c".into(),
        task_id: "t".into(),
        method: "m".into(),
        fixations: points.to_vec(),
        cell_trace: vec![],
        answer: None,
        op_trace: vec![],
    }
}

fn chart(seed: u64) -> RenderedChart {
    (seed..).find_map(|s| render(&generate_spec(s, &GenParams::default()).unwrap()).ok()).unwrap()
}

#[test]
fn pairing_matches_closed_forms() {
    // single-fixation scanpaths: DTW is the Euclidean distance
    let pred: Vec<Scanpath> = [[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]].iter().map(|p| path(&[*p])).collect();
    let refs: Vec<Scanpath> = [[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]].iter().map(|p| path(&[*p])).collect();
    let (mean, best) = mean_best(&pred, &refs, false, dtw).unwrap();
    assert!((mean - (29.0 + 73f64.sqrt() + 52f64.sqrt()) / 9.0).abs() < 1e-12, "{mean}");
    assert!((best - (3.0 + 52f64.sqrt()) / 3.0).abs() < 1e-12, "{best}");

    // the mean includes self-pairs (distance 0), the best does not
    let (mean, best) = leave_one_out(&refs, false, dtw).unwrap();
    assert!((mean - 24.0 / 9.0).abs() < 1e-12, "{mean}");
    assert!((best - 10.0 / 3.0).abs() < 1e-12, "{best}");
    assert!(leave_one_out(&refs[..1], false, dtw).is_err());
}

#[test]
fn pairing_matches_a_double_loop() {
    let mut rng = rng_from(8, &[]);
    let mut rand_path = |n: usize| path(&(0..n).map(|_| [rng.gen_range(0.0..320.0), rng.gen_range(0.0..320.0)]).collect::<Vec<_>>());
    let pred: Vec<Scanpath> = (0..3).map(|k| rand_path(3 + k)).collect();
    let refs: Vec<Scanpath> = (0..3).map(|k| rand_path(5 - k)).collect();
    let g = GridPartition::default();
    let lev = |a: &Scanpath, b: &Scanpath| levenshtein(a, b, &g).map(|v| v as f64);
    let mut table = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            table[i][j] = lev(&pred[i], &refs[j]).unwrap();
        }
    }
    let mean = table.iter().flatten().sum::<f64>() / 9.0;
    let best = table.iter().map(|r| r.iter().cloned().fold(f64::INFINITY, f64::min)).sum::<f64>() / 3.0;
    assert_eq!(mean_best(&pred, &refs, false, lev).unwrap(), (mean, best));
}

#[test]
fn small_metric_examples() {
    // repeated fixations collapse: [1,2,3] vs [1,3] share two letters
    assert!((sequence_score_letters(&[1, 1, 2, 3], &[1, 3]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(sequence_score_letters(&[1, 2], &[3, 4]).unwrap(), 0.0);
    // a stalled scanpath warps onto the moving one for free
    assert_eq!(dtw(&path(&[[0.0, 0.0], [1.0, 0.0]]), &path(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])).unwrap(), 0.0);
    // 16-px cells: (0,0) and (15,15) share a symbol, (16,0) does not
    let g = GridPartition::default();
    assert_eq!(levenshtein(&path(&[[0.0, 0.0]]), &path(&[[15.0, 15.0]]), &g).unwrap(), 0);
    assert_eq!(levenshtein(&path(&[[0.0, 0.0]]), &path(&[[16.0, 0.0]]), &g).unwrap(), 1);
}

#[test]
fn summary_stats_match_an_independent_count() {
    let c = chart(31).with_original_size((1920, 1080)).unwrap();
    let task = generate_task(&c, TaskKind::RetrieveValue, 4).unwrap();
    let mut rng = rng_from(77, &[]);
    let pts: Vec<[f64; 2]> = (0..50).map(|_| [rng.gen_range(0.0..1920.0), rng.gen_range(0.0..1080.0)]).collect();

    let to_px = |p: [f64; 2]| ((p[0] * 320.0 / 1920.0) as i32, (p[1] * 320.0 / 1080.0) as i32);
    let region = |p: [f64; 2]| {
        let (x, y) = to_px(p);
        let mut best: Option<(i64, Region)> = None;
        for a in &c.aois {
            if x >= a.bbox.x0 && x < a.bbox.x1 && y >= a.bbox.y0 && y < a.bbox.y1 {
                let area = (a.bbox.x1 - a.bbox.x0) as i64 * (a.bbox.y1 - a.bbox.y0) as i64;
                if best.is_none_or(|(b, _)| area < b) {
                    best = Some((area, a.kind.region()));
                }
            }
        }
        best.map(|b| b.1)
    };
    let regions: Vec<Option<Region>> = pts.iter().map(|p| region(*p)).collect();
    let pct = |r: Region| 100.0 * regions.iter().filter(|x| **x == Some(r)).count() as f64 / 50.0;
    let mut transitions = 0;
    let mut entries = std::collections::HashMap::new();
    for i in 0..50 {
        if i > 0 && regions[i] != regions[i - 1] {
            transitions += 1;
        }
        if let Some(r) = regions[i] {
            if i == 0 || regions[i - 1] != Some(r) {
                *entries.entry(r).or_insert(0usize) += 1;
            }
        }
    }
    let revisit = |r: Region| entries.get(&r).map_or(0, |n| n - 1);
    let on_task = pts
        .iter()
        .filter(|p| {
            let (x, y) = to_px(**p);
            task.task_aoi_ids.iter().any(|id| c.aoi(id).unwrap().bbox.contains(x, y))
        })
        .count();

    let s = summary_stats(&path(&pts), &c, &task).unwrap();
    assert_eq!(s.num_fixations, 50);
    assert_eq!(s.title_ratio, pct(Region::Title));
    assert_eq!(s.mark_ratio, pct(Region::Mark));
    assert_eq!(s.axis_ratio, pct(Region::Axis));
    assert_eq!(s.transitions, transitions);
    assert_eq!((s.revisit_title, s.revisit_mark, s.revisit_axis), (revisit(Region::Title), revisit(Region::Mark), revisit(Region::Axis)));
    assert_eq!(s.task_aoi_ratio, 100.0 * on_task as f64 / 50.0);

    assert!(summary_stats(&path(&[[1920.0, 0.0]]), &c, &task).is_err());
}

fn cells_of(s: &Scanpath, c: &RenderedChart) -> Vec<usize> {
    let (w, h) = c.original_size;
    s.fixations
        .iter()
        .map(|p| {
            let x = (p[0] * IMAGE_SIZE as f64 / w as f64) as i32;
            let y = (p[1] * IMAGE_SIZE as f64 / h as f64) as i32;
            to_cell((x, y)).unwrap().index()
        })
        .collect()
}

#[test]
fn random_baseline_is_uniform_over_cells() {
    let c = chart(2);
    let n = 40_000;
    let s = baseline_random(&c, n, 5).unwrap();
    let mut counts = vec![0usize; CELLS];
    for k in cells_of(&s, &c) {
        counts[k] += 1;
    }
    let e = n as f64 / CELLS as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let crit = ChiSquared::new((CELLS - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < crit, "chi2 {chi2} vs {crit}");
}

#[test]
fn center_baseline_is_centred() {
    let c = chart(3);
    let s = baseline_center(&c, 20_000, 6).unwrap();
    let cells = cells_of(&s, &c);
    let n = cells.len() as f64;
    let mean_col = cells.iter().map(|k| (k % 20) as f64).sum::<f64>() / n;
    let mean_row = cells.iter().map(|k| (k / 20) as f64).sum::<f64>() / n;
    assert!((mean_col - 9.5).abs() < 0.2 && (mean_row - 9.5).abs() < 0.2, "{mean_col} {mean_row}");
}

#[test]
fn saliency_baseline_prefers_salient_cells() {
    let c = chart(4);
    let scene = Scene::new(&c);
    let s = baseline_saliency(&c, &scene, 5_000, 7).unwrap();
    let mean_sal = cells_of(&s, &c).iter().map(|k| scene.saliency[*k]).sum::<f64>() / 5_000.0;
    let uniform = scene.saliency.iter().sum::<f64>() / CELLS as f64;
    assert!(mean_sal > uniform, "{mean_sal} vs {uniform}");
    assert!(baseline_saliency(&c, &scene, 0, 7).is_err());
}
