mod common;

use approx::assert_abs_diff_eq;
use common::*;
use ndarray::{array, Array2};
use rand::Rng;
use vireid_core::data::Modality;
use vireid_core::evaluation::{
    cmc_map_minp, evaluate, protocol_regdb, protocol_sysu, rank, FeatureSet, RegdbProtocol, Shot, SysuMode,
    SysuProtocol,
};

#[test]
fn hand_worked_ranked_lists() {
    // matches at positions 1, 3, 5
    let m = cmc_map_minp(&[1, 0, 1, 0, 1], 1, &[true; 5], 3).unwrap();
    assert_eq!(m.cmc, vec![1.0, 1.0, 1.0]);
    assert_abs_diff_eq!(m.ap, (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(m.inp, 3.0 / 5.0, epsilon = 1e-12);

    // matches at positions 1 and 3
    let m = cmc_map_minp(&[4, 0, 4, 0], 4, &[true; 4], 2).unwrap();
    assert_abs_diff_eq!(m.ap, 0.833333, epsilon = 5e-7);
    assert_abs_diff_eq!(m.inp, 2.0 / 3.0, epsilon = 1e-12);

    // single match at position 2
    let m = cmc_map_minp(&[0, 1, 0, 0], 1, &[true; 4], 3).unwrap();
    assert_eq!(m.cmc, vec![0.0, 1.0, 1.0]);
    assert_abs_diff_eq!(m.ap, 0.5);
    assert_abs_diff_eq!(m.inp, 0.5);

    // masking the leading negative promotes the match to rank 1
    let m = cmc_map_minp(&[0, 1, 0, 0], 1, &[false, true, true, true], 2).unwrap();
    assert_eq!(m.cmc, vec![1.0, 1.0]);
    assert_abs_diff_eq!(m.ap, 1.0);

    // no valid positive
    assert!(cmc_map_minp(&[0, 1], 1, &[true, false], 2).is_none());
}

#[test]
fn perfect_and_reversed_retrieval() {
    let g = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
    let q = array![[1.0, 0.1]];
    let perfect = evaluate(&q, &[7], &g, &[7, 1, 2], |_, _| true, 3).unwrap();
    assert_eq!(perfect.cmc, vec![1.0, 1.0, 1.0]);
    assert_abs_diff_eq!(perfect.map, 1.0);
    assert_abs_diff_eq!(perfect.minp, 1.0);
    let worst = evaluate(&q, &[2], &g, &[7, 1, 2], |_, _| true, 3).unwrap();
    assert_eq!(worst.cmc, vec![0.0, 0.0, 1.0]);
    assert_abs_diff_eq!(worst.map, 1.0 / 3.0);
    assert_abs_diff_eq!(worst.minp, 1.0 / 3.0);
}

#[test]
fn ties_keep_gallery_order() {
    let g = array![[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]];
    let q = array![[1.0, 0.0]];
    assert_eq!(rank(&q, &g).unwrap(), vec![vec![0, 1, 2]]);
}

#[test]
fn mirrored_gallery_rows_tie_exactly() {
    // equal cosine by symmetry; an accumulation-order wobble would swap them
    let q = array![[-0.999, -0.999]];
    let g = array![[1.001, -0.999], [-0.999, 1.001], [-1.999, -0.999]];
    assert_eq!(rank(&q, &g).unwrap(), vec![vec![2, 0, 1]]);
    let g = array![[-0.999, 1.001], [1.001, -0.999], [-1.999, -0.999]];
    assert_eq!(rank(&q, &g).unwrap(), vec![vec![2, 0, 1]]);
}

#[test]
fn matches_exhaustive_oracle_on_small_galleries() {
    for seed in 0..200 {
        let mut r = rng(seed);
        let d = r.random_range(2..=5);
        let ng = r.random_range(1..=20);
        let nq = r.random_range(1..=6);
        let ids = r.random_range(1..=4);
        // coarse values make exact ties common
        let coarse = |r: &mut rand_chacha::ChaCha8Rng, n: usize| {
            Array2::from_shape_fn((n, d), |_| f64::from(r.random_range(-2i32..=2)))
                + Array2::from_elem((n, d), 1e-3)
        };
        let gallery = coarse(&mut r, ng);
        let query = coarse(&mut r, nq);
        let gids: Vec<usize> = (0..ng).map(|_| r.random_range(0..ids)).collect();
        let qids: Vec<usize> = (0..nq).map(|_| r.random_range(0..ids)).collect();
        let mask: Vec<Vec<bool>> = (0..nq).map(|_| (0..ng).map(|_| r.random_bool(0.8)).collect()).collect();
        let max_rank = 5;

        let per_query: Vec<Option<OracleQuery>> = (0..nq)
            .map(|q| oracle_query(&query.row(q).to_vec(), qids[q], &gallery, &gids, &mask[q], max_rank))
            .collect();
        let counted: Vec<&OracleQuery> = per_query.iter().flatten().collect();
        let got = evaluate(&query, &qids, &gallery, &gids, |q, g| mask[q][g], max_rank);
        if counted.is_empty() {
            assert!(got.is_err(), "seed {seed}");
            continue;
        }
        let got = got.unwrap();
        let n = counted.len() as f64;
        assert_eq!(got.queries, counted.len());
        assert_eq!(got.excluded, nq - counted.len());
        for k in 0..max_rank {
            let want = counted.iter().map(|o| o.cmc[k]).sum::<f64>() / n;
            assert_abs_diff_eq!(got.cmc[k], want, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(got.map, counted.iter().map(|o| o.ap).sum::<f64>() / n, epsilon = 1e-12);
        assert_abs_diff_eq!(got.minp, counted.iter().map(|o| o.inp).sum::<f64>() / n, epsilon = 1e-12);
        assert!(got.cmc.windows(2).all(|w| w[0] <= w[1]));
    }
}

fn set(rows: Vec<[f64; 2]>, ids: Vec<usize>, cams: Vec<u32>, modality: Modality) -> FeatureSet {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    FeatureSet::new(Array2::from_shape_vec((n, 2), flat).unwrap(), ids, cams, modality)
}

#[test]
fn sysu_drops_camera_two_for_camera_three_queries() {
    // identity 0 is only visible on camera 2; its query comes from camera 3
    let gallery = set(
        vec![[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]],
        vec![0, 1, 2],
        vec![2, 1, 4],
        Modality::Visible,
    );
    let query = set(vec![[1.0, 0.0], [0.0, 1.0]], vec![0, 1], vec![3, 6], Modality::Infrared);
    let p = SysuProtocol {
        trials: 3,
        ..SysuProtocol::default()
    };
    let r = protocol_sysu(&query, &gallery, &p).unwrap();
    assert_eq!(r.trials.len(), 3);
    // only the camera-6 query is scored, and it retrieves perfectly
    assert_eq!(r.excluded, 3);
    assert!(r.trials.iter().all(|t| t.queries == 1));
    assert_abs_diff_eq!(r.rank(1), 1.0);

    let no_exclusion = SysuProtocol {
        exclusions: vec![],
        ..p.clone()
    };
    let r = protocol_sysu(&query, &gallery, &no_exclusion).unwrap();
    assert_eq!(r.excluded, 0);
    assert_abs_diff_eq!(r.rank(1), 1.0);
}

#[test]
fn sysu_gallery_sampling_follows_shot_and_mode() {
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut cams = Vec::new();
    for id in 0..3usize {
        for cam in [1u32, 2, 4, 5] {
            for k in 0..12 {
                rows.push([id as f64 + 1.0, k as f64 * 0.01 + cam as f64 * 0.1]);
                ids.push(id);
                cams.push(cam);
            }
        }
    }
    let gallery = set(rows, ids, cams, Modality::Visible);
    let query = set(vec![[1.0, 0.1], [2.0, 0.1]], vec![0, 1], vec![3, 6], Modality::Infrared);
    for (mode, shot, per_id) in [
        (SysuMode::All, Shot::Single, 4),
        (SysuMode::All, Shot::Multi, 40),
        (SysuMode::Indoor, Shot::Single, 2),
        (SysuMode::Indoor, Shot::Multi, 20),
    ] {
        let p = SysuProtocol {
            mode,
            shot,
            trials: 4,
            ..SysuProtocol::default()
        };
        let r = protocol_sysu(&query, &gallery, &p).unwrap();
        assert_eq!(r.trials.len(), 4);
        assert!(r.trials.iter().all(|t| t.gallery_size == 3 * per_id), "{mode:?} {shot:?}");
    }
}

#[test]
fn sysu_requires_camera_tags() {
    let mut gallery = set(vec![[1.0, 0.0]], vec![0], vec![1], Modality::Visible);
    let query = set(vec![[1.0, 0.0]], vec![0], vec![3], Modality::Infrared);
    gallery.cameras[0] = None;
    assert!(protocol_sysu(&query, &gallery, &SysuProtocol::default()).is_err());
}

#[test]
fn regdb_scores_both_directions() {
    let vis = set(vec![[1.0, 0.0], [0.0, 1.0]], vec![0, 1], vec![1, 1], Modality::Visible);
    let ir = set(vec![[0.9, 0.1], [0.1, 0.9]], vec![0, 1], vec![2, 2], Modality::Infrared);
    let r = protocol_regdb(
        &vis,
        &ir,
        &RegdbProtocol {
            repeats: 1,
            ..RegdbProtocol::default()
        },
    )
    .unwrap();
    assert_eq!(r.visible_to_infrared.trials.len(), 1);
    assert_abs_diff_eq!(r.visible_to_infrared.rank(1), 1.0);
    assert_abs_diff_eq!(r.infrared_to_visible.map, 1.0);

    let p = RegdbProtocol {
        repeats: 5,
        ..RegdbProtocol::default()
    };
    let r = protocol_regdb(&vis, &ir, &p).unwrap();
    assert_eq!(r.infrared_to_visible.trials.len(), 5);
    let first = &r.infrared_to_visible.trials[0];
    assert!(r.infrared_to_visible.trials.iter().all(|t| t == first));
}
