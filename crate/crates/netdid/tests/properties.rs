//! Structural property checks: graph distances behave like a metric,
//! exposure is local, loaders reject corrupted files, the estimators
//! satisfy their algebraic identities, and the HAC accumulation keeps its
//! pair accounting straight.

use std::collections::VecDeque;

use proptest::{prop_assert, prop_assert_eq, proptest};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use netdid::data::{read_edges, read_panel, read_rcs, read_staggered, IdMap, PanelDataset};
use netdid::estimators::{
    att_total, datt_hat, datt_overall, dr_score, estimate_with_inference, fit_all_levels,
    Estimand, InferenceConfig, ScoreVector,
};
use netdid::exposure::{exposure_any, exposure_count, ExposureConfig};
use netdid::graph::{rgg_from_positions, sample_positions, Graph};
use netdid::nuisance::{fit_nuisances, LearnerConfig};
use netdid::simulate::{simulate, DgpConfig, DgpKind};
use netdid::variance::hac_variance;

fn random_edges(rng: &mut ChaCha8Rng, n: usize, prob: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(prob) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// BFS distances from `source` over a plain adjacency list; `usize::MAX`
/// marks unreachable nodes.
fn bfs_row(adj: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    adj
}

#[test]
fn distance_is_a_metric_on_random_graphs() {
    let cases = [
        (10, 0.30, 1u64),
        (40, 0.10, 2),
        (120, 0.030, 3),
        (200, 0.015, 4),
        (200, 0.004, 5),
    ];
    for (n, prob, seed) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = random_edges(&mut rng, n, prob);
        let graph = Graph::from_edges(n, &edges).unwrap();
        let adj = adjacency(n, &edges);
        let dist: Vec<Vec<usize>> = (0..n).map(|s| bfs_row(&adj, s)).collect();

        for i in 0..n {
            for j in 0..n {
                let lib = graph.shortest_path_distance(i, j).unwrap();
                let oracle = if dist[i][j] == usize::MAX {
                    None
                } else {
                    Some(dist[i][j])
                };
                assert_eq!(lib, oracle, "n={n} seed={seed}: distance ({i},{j})");
                assert_eq!(
                    dist[i][j], dist[j][i],
                    "n={n} seed={seed}: symmetry at ({i},{j})"
                );
                assert_eq!(dist[i][j] == 0, i == j, "n={n} seed={seed}: identity");
            }
        }
        for i in 0..n {
            for j in 0..n {
                if dist[i][j] == usize::MAX {
                    continue;
                }
                for k in 0..n {
                    if dist[j][k] == usize::MAX {
                        continue;
                    }
                    assert!(
                        dist[i][k] <= dist[i][j] + dist[j][k],
                        "n={n} seed={seed}: triangle violated at ({i},{j},{k})"
                    );
                }
            }
        }
    }
}

#[test]
fn boundaries_partition_components_and_union_to_neighborhoods() {
    for (n, prob, seed) in [(15, 0.25, 11u64), (60, 0.05, 12), (140, 0.015, 13)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = random_edges(&mut rng, n, prob);
        let graph = Graph::from_edges(n, &edges).unwrap();
        let adj = adjacency(n, &edges);

        for i in 0..n {
            let row = bfs_row(&adj, i);
            let mut component: Vec<usize> =
                (0..n).filter(|&j| row[j] != usize::MAX).collect();
            component.sort_unstable();

            let mut union: Vec<usize> = Vec::new();
            for s in 0..=n {
                let ring = graph.boundary(i, s).unwrap();
                let mut expected: Vec<usize> = (0..n).filter(|&j| row[j] == s).collect();
                expected.sort_unstable();
                let mut got = ring.clone();
                got.sort_unstable();
                assert_eq!(got, expected, "node {i} ring {s} (seed {seed})");
                for &j in &ring {
                    assert!(!union.contains(&j), "node {j} in two rings of {i}");
                }
                union.extend(ring);

                if s <= 4 {
                    let mut hood = graph.k_neighborhood(i, s).unwrap();
                    hood.sort_unstable();
                    let mut sorted_union = union.clone();
                    sorted_union.sort_unstable();
                    assert_eq!(
                        hood, sorted_union,
                        "node {i}: k_neighborhood({s}) vs ring union (seed {seed})"
                    );
                }
            }
            union.sort_unstable();
            assert_eq!(union, component, "node {i}: rings must tile the component");
        }
    }
}

#[test]
fn rgg_adjacency_is_invariant_under_point_permutation() {
    let n = 80;
    let positions = sample_positions(n, 777);
    let radius = (5.0 / (std::f64::consts::PI * n as f64)).sqrt();
    let base = rgg_from_positions(&positions, radius).unwrap();

    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(778);
    perm.shuffle(&mut rng);
    let shuffled: Vec<(f64, f64)> = perm.iter().map(|&k| positions[k]).collect();
    let relabeled = rgg_from_positions(&shuffled, radius).unwrap();

    assert_eq!(base.edge_count(), relabeled.edge_count());
    for a in 0..n {
        for b in 0..n {
            let original = base.neighbors(perm[a]).contains(&perm[b]);
            let permuted = relabeled.neighbors(a).contains(&b);
            assert_eq!(
                original, permuted,
                "edge ({a},{b}) after relabeling disagrees with ({},{})",
                perm[a], perm[b]
            );
        }
    }
}

#[test]
fn exposure_any_is_the_count_threshold() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let n = rng.gen_range(2..=60);
        let edges = random_edges(&mut rng, n, 0.1);
        let graph = Graph::from_edges(n, &edges).unwrap();
        let d: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();

        let any = exposure_any(&graph, &d).unwrap();
        let uncapped = exposure_count(&graph, &d, n).unwrap();
        for i in 0..n {
            assert_eq!(any[i] == 1, uncapped[i] >= 1, "node {i} (seed {seed})");
            assert!(any[i] <= 1);
        }
        for cap in 1..=3 {
            let capped = exposure_count(&graph, &d, cap).unwrap();
            let levels = ExposureConfig::Count { cap }.levels();
            assert_eq!(levels, (0..=cap).collect::<Vec<_>>());
            for (i, &g) in capped.iter().enumerate() {
                assert!(levels.contains(&g), "node {i} exposure {g} above cap {cap}");
                assert_eq!(g, uncapped[i].min(cap));
            }
        }
    }
    assert_eq!(ExposureConfig::Any.levels(), vec![0, 1]);
}

#[test]
fn exposure_ignores_treatments_outside_the_neighborhood() {
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_700 + seed);
        let n = rng.gen_range(3..=50);
        let edges = random_edges(&mut rng, n, 0.12);
        let graph = Graph::from_edges(n, &edges).unwrap();
        let d: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let i = rng.gen_range(0..n);

        // Flip every treatment outside the closed 1-neighborhood of i.
        let mut edited = d.clone();
        for (j, v) in edited.iter_mut().enumerate() {
            if j != i && !graph.neighbors(i).contains(&j) {
                *v = 1 - *v;
            }
        }

        assert_eq!(
            exposure_any(&graph, &d).unwrap()[i],
            exposure_any(&graph, &edited).unwrap()[i],
            "any-exposure of {i} moved with off-neighborhood edits (seed {seed})"
        );
        for cap in [1, 2, 4] {
            assert_eq!(
                exposure_count(&graph, &d, cap).unwrap()[i],
                exposure_count(&graph, &edited, cap).unwrap()[i],
                "count-exposure of {i} moved with off-neighborhood edits (seed {seed})"
            );
        }
    }
}

const PANEL_OK: &str = "id,d,y_pre,y_post,x1,x2\n\
                        a,1,0.5,1.5,0.1,0.2\n\
                        b,0,0.4,0.9,-0.3,0.0\n\
                        c,1,0.0,0.3,0.2,1.1\n\
                        d,0,1.0,1.2,0.0,-0.5\n";

const RCS_OK: &str = "id,d,t,y,x1\n\
                      a,1,0,0.5,0.1\n\
                      b,0,1,0.4,-0.3\n\
                      c,1,1,0.0,0.2\n\
                      d,0,0,1.0,0.0\n";

const STAGGERED_OK: &str = "id,adopt_time,y_1,y_2,y_3,x1\n\
                            a,2,0.1,0.2,0.3,0.5\n\
                            b,,0.0,0.1,0.2,-0.5\n\
                            c,3,0.4,0.5,0.6,0.2\n";

fn swap_header_columns(csv: &str, a: usize, b: usize) -> String {
    let lines: Vec<&str> = csv.lines().collect();
    let mut cols: Vec<&str> = lines[0].split(',').collect();
    cols.swap(a, b);
    let mut out = cols.join(",");
    for line in &lines[1..] {
        out.push('\n');
        out.push_str(line);
    }
    out.push('\n');
    out
}

fn edit_cell(csv: &str, row: usize, col: usize, value: &str) -> String {
    let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
    let mut cols: Vec<&str> = lines[1 + row].split(',').collect();
    cols[col] = value;
    lines[1 + row] = cols.join(",");
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

fn truncate_row(csv: &str, row: usize) -> String {
    let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
    let cols: Vec<&str> = lines[1 + row].split(',').collect();
    lines[1 + row] = cols[..cols.len() - 1].join(",");
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

#[test]
fn loaders_reject_every_corruption_in_the_fuzz_corpus() {
    assert!(read_panel(PANEL_OK.as_bytes()).is_ok());
    assert!(read_rcs(RCS_OK.as_bytes()).is_ok());
    assert!(read_staggered(STAGGERED_OK.as_bytes()).is_ok());

    // Any pair of shuffled header columns breaks the documented layout.
    for a in 0..6 {
        for b in (a + 1)..6 {
            let bad = swap_header_columns(PANEL_OK, a, b);
            assert!(
                read_panel(bad.as_bytes()).is_err(),
                "panel accepted header with columns {a} and {b} swapped"
            );
        }
    }
    for a in 0..5 {
        for b in (a + 1)..5 {
            let bad = swap_header_columns(RCS_OK, a, b);
            assert!(read_rcs(bad.as_bytes()).is_err());
        }
    }
    for (a, b) in [(0, 1), (1, 2), (2, 3), (4, 5), (0, 5)] {
        let bad = swap_header_columns(STAGGERED_OK, a, b);
        assert!(read_staggered(bad.as_bytes()).is_err());
    }

    // Truncating any data row leaves it short one field.
    for row in 0..4 {
        assert!(read_panel(truncate_row(PANEL_OK, row).as_bytes()).is_err());
        assert!(read_rcs(truncate_row(RCS_OK, row).as_bytes()).is_err());
    }
    for row in 0..3 {
        assert!(read_staggered(truncate_row(STAGGERED_OK, row).as_bytes()).is_err());
    }

    // Every numeric cell rejects junk and emptiness; the id column rejects
    // emptiness and duplicates.
    for row in 0..4 {
        for col in 1..6 {
            for junk in ["abc", "", "1.2.3", "nan"] {
                let bad = edit_cell(PANEL_OK, row, col, junk);
                assert!(
                    read_panel(bad.as_bytes()).is_err(),
                    "panel accepted '{junk}' at row {row} col {col}"
                );
            }
        }
    }
    assert!(read_panel(edit_cell(PANEL_OK, 2, 0, "").as_bytes()).is_err());
    assert!(read_panel(edit_cell(PANEL_OK, 2, 0, "a").as_bytes()).is_err());
    for col in 1..5 {
        let bad = edit_cell(RCS_OK, 1, col, "junk");
        assert!(read_rcs(bad.as_bytes()).is_err());
    }
    assert!(read_rcs(edit_cell(RCS_OK, 0, 2, "2").as_bytes()).is_err());
    for col in 1..6 {
        let bad = edit_cell(STAGGERED_OK, 0, col, "x");
        assert!(read_staggered(bad.as_bytes()).is_err());
    }

    // Edge lists: ragged rows and identifiers missing from the dataset.
    let panel = read_panel(PANEL_OK.as_bytes()).unwrap();
    assert!(read_edges("src,dst\na,b\nc\n".as_bytes(), &panel.ids).is_err());
    assert!(read_edges("src,dst\na,zzz\n".as_bytes(), &panel.ids).is_err());
    assert!(read_edges("dst,src\na,b\n".as_bytes(), &panel.ids).is_err());
}

proptest! {
    #[test]
    fn dr_score_is_invariant_to_common_outcome_shifts(
        d in 0u8..=1,
        g in 0usize..=3,
        level in 0usize..=3,
        p in 0.01f64..0.99,
        y_pre in -1e3f64..1e3,
        y_post in -1e3f64..1e3,
        m0 in -10.0f64..10.0,
        shift in -1e3f64..1e3,
    ) {
        let dy = y_post - y_pre;
        let shifted = (y_post + shift) - (y_pre + shift);
        let s1 = dr_score(d, g, level, p, dy, m0);
        let s2 = dr_score(d, g, level, p, shifted, m0);
        prop_assert!(
            (s1 - s2).abs() <= 1e-9 * (1.0 + s1.abs()),
            "score moved under a common outcome shift: {s1} vs {s2}"
        );
        if g != level {
            prop_assert_eq!(s1, 0.0, "off-level score must vanish exactly");
        }
    }
}

/// Simulated panel plus the edge list needed to rebuild its graph on a
/// larger node set.
fn simulated(kind: DgpKind, n: usize, seed: u64) -> (PanelDataset, Graph, Vec<(usize, usize)>) {
    let sim = simulate(&DgpConfig::new(kind, n, seed)).unwrap();
    let mut edges = Vec::new();
    for i in 0..sim.graph.n() {
        for &j in sim.graph.neighbors(i) {
            if i < j {
                edges.push((i, j));
            }
        }
    }
    (sim.panel, sim.graph, edges)
}

#[test]
fn off_level_units_never_move_the_estimate() {
    let (panel, graph, edges) = simulated(DgpKind::AppendixE, 160, 21);
    let expo = ExposureConfig::Any;
    let g = expo.compute(&graph, &panel.d).unwrap();
    let learner = LearnerConfig::default();
    let fit = fit_nuisances(&panel, &graph, &g, 1, &learner).unwrap();
    let eps_trim = 0.01;
    let (base_est, _, base_trim) = datt_hat(&panel, &g, &fit, eps_trim).unwrap();

    // Append isolated units: their exposure is 0, off the target level, so
    // with the nuisances frozen they may enter the analysis set but carry
    // zero weight in both legs.
    let extra = 10;
    let n2 = panel.n + extra;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut d = panel.d.clone();
    let mut y_pre = panel.y_pre.clone();
    let mut y_post = panel.y_post.clone();
    let mut x = panel.x.clone();
    for k in 0..extra {
        d.push((k % 2) as u8);
        y_pre.push(rng.sample(StandardNormal));
        y_post.push(rng.sample(StandardNormal));
        for _ in 0..panel.p {
            x.push(rng.sample(StandardNormal));
        }
    }
    let panel2 = PanelDataset::new(d, y_pre, y_post, x, panel.p, IdMap::default()).unwrap();
    let graph2 = Graph::from_edges(n2, &edges).unwrap();
    let g2 = expo.compute(&graph2, &panel2.d).unwrap();
    for &v in &g2[panel.n..] {
        assert_eq!(v, 0, "appended units must be isolated");
    }

    let mut fit2 = fit.clone();
    for _ in 0..extra {
        fit2.p1_raw.push(0.5);
        fit2.p1.push(0.5);
        fit2.p0_raw.push(0.5);
        fit2.p0.push(0.5);
        fit2.mu0.push(0.3);
    }
    let (ext_est, ext_scores, ext_trim) = datt_hat(&panel2, &g2, &fit2, eps_trim).unwrap();

    assert_eq!(
        ext_trim.set.len(),
        base_trim.set.len() + extra,
        "appended units should survive trimming"
    );
    assert_eq!(ext_est, base_est, "estimate moved when off-level units joined");
    for k in 0..extra {
        let idx = ext_scores.set().iter().position(|&i| i == panel.n + k).unwrap();
        assert_eq!(
            ext_scores.scores()[idx],
            ext_est,
            "an off-level unit's influence score must sit at the estimate"
        );
    }
}

#[test]
fn edgeless_graphs_collapse_to_the_naive_estimator() {
    let (panel, _, _) = simulated(DgpKind::AppendixE, 200, 31);
    let empty = Graph::empty(panel.n);
    let expo = ExposureConfig::Count { cap: 2 };
    let learner = LearnerConfig::default();
    let inference = InferenceConfig::default();

    let (datt_report, _) = estimate_with_inference(
        &panel,
        &empty,
        &expo,
        Estimand::Datt { level: 0 },
        &learner,
        &inference,
    )
    .unwrap();
    let (naive_report, _) = estimate_with_inference(
        &panel,
        &empty,
        &expo,
        Estimand::Naive,
        &learner,
        &inference,
    )
    .unwrap();

    assert!(
        (datt_report.estimate - naive_report.estimate).abs() <= 1e-10,
        "edge-free direct effect {} vs naive {}",
        datt_report.estimate,
        naive_report.estimate
    );
    assert_eq!(datt_report.m_n, naive_report.m_n);
}

#[test]
fn decomposition_adds_up_exactly() {
    let (panel, graph, _) = simulated(DgpKind::MainS6, 400, 41);
    let expo = ExposureConfig::Any;
    let g = expo.compute(&graph, &panel.d).unwrap();
    let learner = LearnerConfig::default();
    let fits = fit_all_levels(&panel, &graph, &g, &expo, &learner).unwrap();
    let eps_trim = 0.01;

    let (direct, _, _, direct_bd) = datt_overall(&panel, &g, &fits, eps_trim).unwrap();
    let (total, _, _, total_bd) = att_total(&panel, &g, &fits, eps_trim).unwrap();

    assert_eq!(direct_bd.shares, total_bd.shares);
    for (a, b) in direct_bd.datt.iter().zip(&total_bd.datt) {
        assert!((a.is_nan() && b.is_nan()) || a == b, "per-level components differ");
    }

    let spillover: f64 = total_bd
        .shares
        .iter()
        .zip(&total_bd.satt)
        .filter(|(&share, _)| share > 0.0)
        .map(|(&share, &s)| share * s)
        .sum();
    assert!(
        (total - (direct + spillover)).abs() <= 1e-12 * total.abs().max(1.0),
        "total {total} vs direct {direct} + spillover {spillover}"
    );
}

#[test]
fn hac_doubling_shift_and_window_monotonicity() {
    let n = 150;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let edges = random_edges(&mut rng, n, 0.03);
    let graph = Graph::from_edges(n, &edges).unwrap();
    let adj = adjacency(n, &edges);
    let set: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.8)).collect();
    let m = set.len();
    let scores: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let sv = ScoreVector::new(scores.clone(), set.clone()).unwrap();

    let mean = scores.iter().sum::<f64>() / m as f64;
    let dev: Vec<f64> = scores.iter().map(|s| s - mean).collect();
    let dist: Vec<Vec<usize>> = set.iter().map(|&i| bfs_row(&adj, i)).collect();

    let mut previous_pairs = 0usize;
    for b in 0..=6usize {
        let report = hac_variance(&sv, &graph, b).unwrap();

        // Doubling identity: the symmetric ordered accumulation equals
        // twice the unordered off-diagonal sum plus the diagonal.
        let mut unordered = 0.0;
        let mut unordered_pairs = 0usize;
        for a in 0..m {
            for c in (a + 1)..m {
                if dist[a][set[c]] <= b {
                    unordered += dev[a] * dev[c];
                    unordered_pairs += 1;
                }
            }
        }
        let diagonal: f64 = dev.iter().map(|v| v * v).sum();
        let doubled = (2.0 * unordered + diagonal) / m as f64;
        assert!(
            (report.sigma2 - doubled).abs() <= 1e-12 * doubled.abs().max(1.0),
            "bandwidth {b}: sigma2 {} vs doubled unordered {doubled}",
            report.sigma2
        );
        assert_eq!(report.pairs, 2 * unordered_pairs + m, "bandwidth {b} pair count");

        // The contributing-pair set only grows with the window.
        assert!(
            report.pairs >= previous_pairs,
            "pair count shrank from {previous_pairs} at bandwidth {b}"
        );
        previous_pairs = report.pairs;

        // A common shift relocates the mean, not the deviations.
        let shifted: Vec<f64> = scores.iter().map(|s| s + 7.5).collect();
        let sv_shift = ScoreVector::new(shifted, set.clone()).unwrap();
        let report_shift = hac_variance(&sv_shift, &graph, b).unwrap();
        assert!(
            (report.sigma2 - report_shift.sigma2).abs()
                <= 1e-10 * report.sigma2.abs().max(1.0),
            "bandwidth {b}: shift moved sigma2 from {} to {}",
            report.sigma2,
            report_shift.sigma2
        );
        assert_eq!(report.pairs, report_shift.pairs);
    }
}

#[test]
fn clipped_propensities_respect_the_configured_band() {
    let (panel, graph, _) = simulated(DgpKind::AppendixE, 150, 61);
    let expo = ExposureConfig::Any;
    let g = expo.compute(&graph, &panel.d).unwrap();
    let eps = 0.05;
    let learner = LearnerConfig {
        eps_clip: eps,
        ..LearnerConfig::default()
    };
    for level in expo.levels() {
        let fit = fit_nuisances(&panel, &graph, &g, level, &learner).unwrap();
        let mut moved = (0, 0);
        for i in 0..fit.n() {
            assert!(fit.p1[i] >= eps && fit.p1[i] <= 1.0 - eps);
            assert!(fit.p0[i] >= eps && fit.p0[i] <= 1.0 - eps);
            if fit.p1[i] != fit.p1_raw[i] {
                moved.0 += 1;
                assert!(fit.p1_raw[i] < eps || fit.p1_raw[i] > 1.0 - eps);
            }
            if fit.p0[i] != fit.p0_raw[i] {
                moved.1 += 1;
                assert!(fit.p0_raw[i] < eps || fit.p0_raw[i] > 1.0 - eps);
            }
        }
        assert_eq!(moved, (fit.clipped_p1, fit.clipped_p0), "level {level}");
    }
}
