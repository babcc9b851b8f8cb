use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, MetricsReport, DEFAULT_MAX_RANK};
use crate::data::Modality;
use crate::error::{ensure, Error, Result};

/// Features of one split with identity and camera tags.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Array2<f64>,
    pub identities: Vec<usize>,
    /// `None` when the source carried no camera tag.
    pub cameras: Vec<Option<u32>>,
    pub modality: Modality,
}

impl FeatureSet {
    pub fn new(features: Array2<f64>, identities: Vec<usize>, cameras: Vec<u32>, modality: Modality) -> Self {
        Self {
            features,
            identities,
            cameras: cameras.into_iter().map(Some).collect(),
            modality,
        }
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    fn check(&self, what: &str) -> Result<()> {
        ensure!(!self.is_empty(), "{what} split is empty");
        ensure!(
            self.features.nrows() == self.len() && self.cameras.len() == self.len(),
            "{what} split has inconsistent row counts"
        );
        Ok(())
    }

    fn cameras_required(&self, what: &str) -> Result<Vec<u32>> {
        self.cameras
            .iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| Error::validation(format!("{what} item {i} has no camera tag"))))
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> FeatureSet {
        FeatureSet {
            features: self.features.select(Axis(0), rows),
            identities: rows.iter().map(|&r| self.identities[r]).collect(),
            cameras: rows.iter().map(|&r| self.cameras[r]).collect(),
            modality: self.modality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SysuMode {
    All,
    Indoor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shot {
    Single,
    Multi,
}

impl Shot {
    pub fn per_camera(self) -> usize {
        match self {
            Shot::Single => 1,
            Shot::Multi => 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SysuProtocol {
    pub mode: SysuMode,
    pub shot: Shot,
    pub trials: usize,
    pub seed: u64,
    pub all_cameras: Vec<u32>,
    pub indoor_cameras: Vec<u32>,
    /// `(query camera, gallery camera)` pairs never compared.
    pub exclusions: Vec<(u32, u32)>,
    pub max_rank: usize,
}

impl Default for SysuProtocol {
    fn default() -> Self {
        Self {
            mode: SysuMode::All,
            shot: Shot::Single,
            trials: 10,
            seed: 0,
            all_cameras: vec![1, 2, 4, 5],
            indoor_cameras: vec![1, 2],
            exclusions: vec![(3, 2)],
            max_rank: DEFAULT_MAX_RANK,
        }
    }
}

/// Infrared queries against visible galleries resampled per trial: one (or
/// ten) images per identity per gallery camera.
pub fn protocol_sysu(query: &FeatureSet, gallery: &FeatureSet, p: &SysuProtocol) -> Result<MetricsReport> {
    query.check("query")?;
    gallery.check("gallery")?;
    ensure!(p.trials > 0, "trials must be positive");
    let q_cams = query.cameras_required("query")?;
    let g_cams = gallery.cameras_required("gallery")?;
    let allowed = match p.mode {
        SysuMode::All => &p.all_cameras,
        SysuMode::Indoor => &p.indoor_cameras,
    };
    let mut groups: BTreeMap<(usize, u32), Vec<usize>> = BTreeMap::new();
    for (i, (&id, &cam)) in gallery.identities.iter().zip(&g_cams).enumerate() {
        if allowed.contains(&cam) {
            groups.entry((id, cam)).or_default().push(i);
        }
    }
    ensure!(!groups.is_empty(), "no gallery items on the {:?} cameras {allowed:?}", p.mode);

    let mut trials = Vec::with_capacity(p.trials);
    for t in 0..p.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_mul(0x9e37_79b9).wrapping_add(t as u64));
        let mut rows = Vec::new();
        for members in groups.values() {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            m.truncate(p.shot.per_camera());
            m.sort_unstable();
            rows.extend(m);
        }
        let g = gallery.select(&rows);
        let g_cam: Vec<u32> = rows.iter().map(|&r| g_cams[r]).collect();
        trials.push(evaluate(
            &query.features,
            &query.identities,
            &g.features,
            &g.identities,
            |qi, gi| !p.exclusions.contains(&(q_cams[qi], g_cam[gi])),
            p.max_rank,
        )?);
    }
    Ok(MetricsReport::from_trials(trials))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    VisibleToInfrared,
    InfraredToVisible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegdbProtocol {
    pub repeats: usize,
    pub seed: u64,
    /// Gallery images kept per identity in each repeat; `None` keeps all of
    /// them, making every repeat identical.
    pub gallery_per_identity: Option<usize>,
    pub max_rank: usize,
}

impl Default for RegdbProtocol {
    fn default() -> Self {
        Self {
            repeats: 10,
            seed: 0,
            gallery_per_identity: None,
            max_rank: DEFAULT_MAX_RANK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegdbReport {
    pub visible_to_infrared: MetricsReport,
    pub infrared_to_visible: MetricsReport,
}

pub fn protocol_regdb(visible: &FeatureSet, infrared: &FeatureSet, p: &RegdbProtocol) -> Result<RegdbReport> {
    Ok(RegdbReport {
        visible_to_infrared: evaluate_direction(visible, infrared, Direction::VisibleToInfrared, p)?,
        infrared_to_visible: evaluate_direction(visible, infrared, Direction::InfraredToVisible, p)?,
    })
}

pub fn evaluate_direction(
    visible: &FeatureSet,
    infrared: &FeatureSet,
    direction: Direction,
    p: &RegdbProtocol,
) -> Result<MetricsReport> {
    visible.check("visible")?;
    infrared.check("infrared")?;
    ensure!(p.repeats > 0, "repeats must be positive");
    let (query, gallery) = match direction {
        Direction::VisibleToInfrared => (visible, infrared),
        Direction::InfraredToVisible => (infrared, visible),
    };
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &id) in gallery.identities.iter().enumerate() {
        by_id.entry(id).or_default().push(i);
    }
    let mut trials = Vec::with_capacity(p.repeats);
    for r in 0..p.repeats {
        let g = match p.gallery_per_identity {
            None => gallery.clone(),
            Some(n) => {
                let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_mul(0x85eb_ca6b).wrapping_add(r as u64));
                let mut rows = Vec::new();
                for members in by_id.values() {
                    let mut m = members.clone();
                    m.shuffle(&mut rng);
                    m.truncate(n.max(1));
                    m.sort_unstable();
                    rows.extend(m);
                }
                gallery.select(&rows)
            }
        };
        trials.push(evaluate(
            &query.features,
            &query.identities,
            &g.features,
            &g.identities,
            |_, _| true,
            p.max_rank,
        )?);
    }
    Ok(MetricsReport::from_trials(trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(angle: f64) -> [f64; 2] {
        [angle.cos(), angle.sin()]
    }

    fn set(rows: &[([f64; 2], usize, u32)], modality: Modality) -> FeatureSet {
        let mut f = Array2::zeros((rows.len(), 2));
        for (i, (v, _, _)) in rows.iter().enumerate() {
            f[[i, 0]] = v[0];
            f[[i, 1]] = v[1];
        }
        FeatureSet::new(
            f,
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            modality,
        )
    }

    #[test]
    fn sysu_exclusion_and_gallery_size() {
        // q0 (cam 3, id 0) sits on top of the cam-2 image of id 1, which the
        // exclusion rule hides; the next closest is its own cam-1 image.
        let gallery = set(
            &[
                (unit(0.3), 0, 1),
                (unit(0.0), 1, 2),
                (unit(1.5), 1, 1),
                (unit(2.0), 0, 2),
            ],
            Modality::Visible,
        );
        let query = set(&[(unit(0.0), 0, 3)], Modality::Infrared);
        let p = SysuProtocol {
            trials: 2,
            ..SysuProtocol::default()
        };
        let r = protocol_sysu(&query, &gallery, &p).unwrap();
        assert_eq!(r.trials.len(), 2);
        assert_eq!(r.trials[0].gallery_size, 4);
        assert_eq!(r.rank(1), 1.0);
        assert_eq!(r.map, 1.0);

        // A cam-6 query sees the cam-2 distractor first.
        let query = set(&[(unit(0.0), 0, 6)], Modality::Infrared);
        let r = protocol_sysu(&query, &gallery, &p).unwrap();
        assert_eq!(r.rank(1), 0.0);
        // positives at ranks 2 and 4
        assert_abs_diff_eq!(r.map, (0.5 + 0.5) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.minp, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn indoor_mode_restricts_cameras() {
        let gallery = set(
            &[(unit(0.0), 0, 1), (unit(0.1), 1, 4), (unit(1.0), 1, 1)],
            Modality::Visible,
        );
        let query = set(&[(unit(0.1), 1, 6)], Modality::Infrared);
        let all = protocol_sysu(&query, &gallery, &SysuProtocol::default()).unwrap();
        assert_eq!(all.rank(1), 1.0);
        let indoor = SysuProtocol {
            mode: SysuMode::Indoor,
            ..SysuProtocol::default()
        };
        let r = protocol_sysu(&query, &gallery, &indoor).unwrap();
        assert_eq!(r.trials[0].gallery_size, 2);
        assert_eq!(r.rank(1), 0.0);
    }

    #[test]
    fn missing_cameras_rejected() {
        let mut gallery = set(&[(unit(0.0), 0, 1)], Modality::Visible);
        gallery.cameras[0] = None;
        let query = set(&[(unit(0.0), 0, 3)], Modality::Infrared);
        assert!(matches!(
            protocol_sysu(&query, &gallery, &SysuProtocol::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn regdb_three_identities() {
        let vis = set(
            &[(unit(0.0), 0, 0), (unit(1.0), 1, 0), (unit(2.0), 2, 0)],
            Modality::Visible,
        );
        let ir = set(
            &[(unit(0.1), 0, 1), (unit(1.6), 1, 1), (unit(1.4), 2, 1)],
            Modality::Infrared,
        );
        let p = RegdbProtocol {
            repeats: 1,
            ..RegdbProtocol::default()
        };
        let r = protocol_regdb(&vis, &ir, &p).unwrap();
        // Visible queries 1 and 2 each see the other identity's infrared image first.
        let v2i = &r.visible_to_infrared;
        assert_abs_diff_eq!(v2i.map, (1.0 + 0.5 + 0.5) / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v2i.rank(1), 1.0 / 3.0, epsilon = 1e-12);
        let i2v = &r.infrared_to_visible;
        assert_abs_diff_eq!(i2v.map, (1.0 + 0.5 + 0.5) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn repeats_of_full_gallery_match_single_run() {
        let vis = set(&[(unit(0.0), 0, 0), (unit(1.0), 1, 0)], Modality::Visible);
        let ir = set(&[(unit(0.2), 0, 1), (unit(0.9), 1, 1)], Modality::Infrared);
        let one = evaluate_direction(&vis, &ir, Direction::InfraredToVisible, &RegdbProtocol { repeats: 1, ..Default::default() }).unwrap();
        let many = evaluate_direction(&vis, &ir, Direction::InfraredToVisible, &RegdbProtocol::default()).unwrap();
        assert_eq!(one.map, many.map);
        assert_eq!(many.trials.len(), 10);
    }
}
