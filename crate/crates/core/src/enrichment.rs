//! Label transfer from the model cloud and per-class thermal statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, SemanticClass};
use crate::spatial::SpatialIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferParams {
    pub max_distance: f64,
    /// Replace output coordinates by the transformed (model-frame) ones.
    pub georeference: bool,
}

impl Default for TransferParams {
    fn default() -> Self {
        Self {
            max_distance: 0.3,
            georeference: false,
        }
    }
}

impl TransferParams {
    /// Threshold tied to the model sampling rate: three grid steps.
    pub fn for_sampling_rate(rate: f64) -> Self {
        Self {
            max_distance: 3.0 * rate,
            georeference: false,
        }
    }
}

/// Model cloud prepared for repeated transfers.
#[derive(Clone, Debug)]
pub struct LabelSource<'a> {
    model: &'a PointCloud,
    index: SpatialIndex,
}

impl<'a> LabelSource<'a> {
    pub fn new(model: &'a PointCloud) -> Result<Self> {
        if model.is_empty() {
            return Err(Error::EmptyInput("model cloud"));
        }
        if !model.has_labels() {
            return Err(Error::InvalidParameter("model cloud carries no labels".into()));
        }
        if model.labels().contains(&SemanticClass::Unlabeled) {
            return Err(Error::InvalidParameter("model cloud contains unlabeled points".into()));
        }
        Ok(Self {
            model,
            index: SpatialIndex::new(model.points())?,
        })
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    /// Labels and ids for `thermal` after mapping it with `t`.
    pub fn transfer(&self, thermal: &PointCloud, t: &RigidTransform, params: &TransferParams) -> Result<PointCloud> {
        t.validate()?;
        if !(params.max_distance > 0.0 && params.max_distance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "transfer distance must be positive, got {}",
                params.max_distance
            )));
        }
        let moved: Vec<_> = thermal.points().par_iter().map(|p| t.apply(p)).collect();
        let nn = self.index.nearest_many(&moved);
        let model_ids = self.model.ids();
        let (labels, ids): (Vec<SemanticClass>, Vec<String>) = nn
            .iter()
            .map(|&(j, d)| {
                if d <= params.max_distance {
                    let id = if model_ids.is_empty() {
                        String::new()
                    } else {
                        model_ids[j].clone()
                    };
                    (self.model.labels()[j], id)
                } else {
                    (SemanticClass::Unlabeled, String::new())
                }
            })
            .unzip();
        let mut out = if params.georeference {
            thermal.with_points(moved)?
        } else {
            thermal.clone()
        };
        out.set_labels_and_ids(labels, ids);
        Ok(out)
    }
}

/// Gives each transformed thermal point the label and id of its nearest
/// model point within `max_distance`; all others become Unlabeled with an
/// empty id. Intensities are kept.
pub fn transfer_labels(
    thermal: &PointCloud,
    model: &PointCloud,
    t: &RigidTransform,
    params: &TransferParams,
) -> Result<PointCloud> {
    LabelSource::new(model)?.transfer(thermal, t, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: SemanticClass,
    /// All points of the class.
    pub count: usize,
    /// Points of the class carrying intensity.
    pub intensity_count: usize,
    pub mean_intensity: Option<f64>,
    /// Population standard deviation.
    pub std_intensity: Option<f64>,
    /// `intensity_count / count`, zero for empty classes.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStatistics {
    /// One row per class in [`SemanticClass::ALL`] order.
    pub rows: Vec<ClassRow>,
}

impl ClassStatistics {
    pub fn row(&self, class: SemanticClass) -> &ClassRow {
        self.rows
            .iter()
            .find(|r| r.class == class)
            .expect("every class has a row")
    }
}

/// Per-class counts and intensity mean / population standard deviation.
pub fn class_statistics(cloud: &PointCloud) -> Result<ClassStatistics> {
    if !cloud.has_labels() {
        return Err(Error::InvalidParameter("statistics need a labeled cloud".into()));
    }
    if !cloud.intensity().iter().any(Option::is_some) {
        return Err(Error::InvalidParameter("no point carries an intensity".into()));
    }
    let rows = SemanticClass::ALL
        .iter()
        .map(|&class| {
            let members: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.labels()[i] == class).collect();
            let values: Vec<f64> = members.iter().filter_map(|&i| cloud.intensity()[i]).collect();
            let (mean, std) = if values.is_empty() {
                (None, None)
            } else {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (Some(mean), Some(var.sqrt()))
            };
            ClassRow {
                class,
                count: members.len(),
                intensity_count: values.len(),
                mean_intensity: mean,
                std_intensity: std,
                coverage: if members.is_empty() {
                    0.0
                } else {
                    values.len() as f64 / members.len() as f64
                },
            }
        })
        .collect();
    Ok(ClassStatistics { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, Vector3};

    fn model() -> PointCloud {
        PointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ])
        .unwrap()
        .with_labels(vec![SemanticClass::Wall, SemanticClass::Window, SemanticClass::Door])
        .unwrap()
        .with_ids(vec!["w".into(), "win1".into(), "d".into()])
        .unwrap()
    }

    #[test]
    fn coincident_and_far_points() {
        let thermal = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0), Point3::new(1.0, 5.0, 0.0)])
            .unwrap()
            .with_intensity(vec![Some(0.3), None])
            .unwrap();
        let p = TransferParams {
            max_distance: 0.5,
            georeference: false,
        };
        let out = transfer_labels(&thermal, &model(), &RigidTransform::identity(), &p).unwrap();
        assert_eq!(out.labels(), &[SemanticClass::Window, SemanticClass::Unlabeled]);
        assert_eq!(out.ids(), &["win1".to_string(), String::new()]);
        assert_eq!(out.intensity(), thermal.intensity());
    }

    #[test]
    fn georeference_flag() {
        let thermal = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)]).unwrap();
        let t = RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0));
        let p = TransferParams::default();
        let out = transfer_labels(&thermal, &model(), &t, &p).unwrap();
        assert_eq!(out.labels(), &[SemanticClass::Door]);
        assert_eq!(out.point(0), Point3::origin());
        let geo = TransferParams {
            georeference: true,
            ..p
        };
        let out = transfer_labels(&thermal, &model(), &t, &geo).unwrap();
        assert_eq!(out.point(0), Point3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn unlabeled_model_is_rejected() {
        let thermal = PointCloud::new(vec![Point3::origin()]).unwrap();
        let bare = PointCloud::new(vec![Point3::origin()]).unwrap();
        let id = RigidTransform::identity();
        assert!(matches!(
            transfer_labels(&thermal, &bare, &id, &TransferParams::default()),
            Err(Error::InvalidParameter(_))
        ));
        let partly = bare.with_labels(vec![SemanticClass::Unlabeled]).unwrap();
        assert!(transfer_labels(&thermal, &partly, &id, &TransferParams::default()).is_err());
    }

    #[test]
    fn statistics_by_hand() {
        let cloud = PointCloud::new(vec![Point3::origin(); 5])
            .unwrap()
            .with_labels(vec![
                SemanticClass::Wall,
                SemanticClass::Wall,
                SemanticClass::Window,
                SemanticClass::Window,
                SemanticClass::Unlabeled,
            ])
            .unwrap()
            .with_intensity(vec![Some(0.0), Some(1.0), Some(0.5), Some(0.5), None])
            .unwrap();
        let s = class_statistics(&cloud).unwrap();
        let wall = s.row(SemanticClass::Wall);
        assert_eq!((wall.mean_intensity, wall.std_intensity), (Some(0.5), Some(0.5)));
        let win = s.row(SemanticClass::Window);
        assert_eq!((win.mean_intensity, win.std_intensity), (Some(0.5), Some(0.0)));
        let un = s.row(SemanticClass::Unlabeled);
        assert_eq!((un.count, un.intensity_count, un.mean_intensity), (1, 0, None));
        assert_eq!(s.row(SemanticClass::Roof).count, 0);
        assert_eq!(s.rows.iter().map(|r| r.count).sum::<usize>(), 5);
    }

    #[test]
    fn constant_intensity_has_zero_spread() {
        let cloud = PointCloud::new(vec![Point3::origin(); 4])
            .unwrap()
            .with_labels(vec![SemanticClass::Roof; 4])
            .unwrap()
            .with_intensity(vec![Some(0.4); 4])
            .unwrap();
        let r = class_statistics(&cloud).unwrap().row(SemanticClass::Roof).clone();
        assert!((r.mean_intensity.unwrap() - 0.4).abs() < 1e-15);
        assert!(r.std_intensity.unwrap() < 1e-15);
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn statistics_need_intensity_and_labels() {
        let bare = PointCloud::new(vec![Point3::origin()]).unwrap();
        assert!(class_statistics(&bare).is_err());
        let labeled = bare.with_labels(vec![SemanticClass::Wall]).unwrap();
        assert!(matches!(class_statistics(&labeled), Err(Error::InvalidParameter(_))));
    }
}
