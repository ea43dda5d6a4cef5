//! Annotation file format: one JSON file per dataset plus packed tensor
//! sidecar files holding proposal features and union-box feature maps.
//!
//! ```json
//! { "class_names": [...], "predicate_names": [...], "predicate_type_sizes": [3,6,17],
//!   "videos": [ { "video_id": "v0", "frames": [ { "frame_index": 0,
//!     "proposals": [ { "box": [x1,y1,x2,y2], "class_distribution": [...], "feature_ref": "file#offset" } ],
//!     "relationships": [ { "subject": 0, "object": 1, "predicates": [2],
//!                          "union_feature_ref": "file#offset", "track_id": 7 } ] } ] } ] }
//! ```
//!
//! `feature_ref` strings point into tensor files (`io` module of the autograd
//! crate) relative to the JSON file's directory.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stket_autograd::io::{parse_ref, Dtype, TensorFileReader, TensorFileWriter};
use stket_autograd::Tensor;

use crate::data::{BBox, Dataset, FrameAnnotation, ObjectProposal, RelationshipInstance, VideoAnnotation};
use crate::error::{CoreError, Result};

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    class_names: Vec<String>,
    predicate_names: Vec<String>,
    #[serde(default)]
    predicate_type_sizes: Vec<usize>,
    videos: Vec<VideoJson>,
}

#[derive(Serialize, Deserialize)]
struct VideoJson {
    video_id: String,
    frames: Vec<FrameJson>,
}

#[derive(Serialize, Deserialize)]
struct FrameJson {
    frame_index: i64,
    proposals: Vec<ProposalJson>,
    relationships: Vec<RelationshipJson>,
}

#[derive(Serialize, Deserialize)]
struct ProposalJson {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_distribution: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_ref: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RelationshipJson {
    subject: usize,
    object: usize,
    predicates: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    union_feature_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<u64>,
}

/// Resolves `"file#offset"` refs against the dataset directory, opening each
/// sidecar file once.
struct RefResolver<'a> {
    dir: &'a Path,
    readers: HashMap<String, TensorFileReader>,
}

impl<'a> RefResolver<'a> {
    fn new(dir: &'a Path) -> Self {
        RefResolver {
            dir,
            readers: HashMap::new(),
        }
    }

    fn fetch(&mut self, r: &str, ctx: &str) -> Result<Tensor> {
        let (file, offset) =
            parse_ref(r).map_err(|e| CoreError::parse(ctx, e.to_string()))?;
        if !self.readers.contains_key(file) {
            let reader = TensorFileReader::open(&self.dir.join(file))
                .map_err(|e| CoreError::parse(ctx, format!("cannot open sidecar {file}: {e}")))?;
            self.readers.insert(file.to_string(), reader);
        }
        self.readers
            .get_mut(file)
            .unwrap()
            .read_at(offset)
            .map_err(|e| CoreError::parse(ctx, format!("bad tensor at {r}: {e}")))
    }
}

/// Load and validate a dataset from an annotation JSON file.
pub fn load_annotations(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::parse(path.display().to_string(), e.to_string()))?;
    let raw: DatasetJson = serde_json::from_str(&text)
        .map_err(|e| CoreError::parse(path.display().to_string(), e.to_string()))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut resolver = RefResolver::new(dir);

    let mut videos = Vec::with_capacity(raw.videos.len());
    for v in raw.videos {
        let ctx = format!("video {}", v.video_id);
        let mut frames = Vec::with_capacity(v.frames.len());
        for f in v.frames {
            let mut proposals = Vec::with_capacity(f.proposals.len());
            for p in f.proposals {
                let feature = match &p.feature_ref {
                    Some(r) => Some(resolver.fetch(r, &ctx)?),
                    None => None,
                };
                let [x1, y1, x2, y2] = p.bbox;
                proposals.push(ObjectProposal::new(
                    BBox::new(x1, y1, x2, y2),
                    p.class_distribution,
                    feature,
                ));
            }
            let mut relationships = Vec::with_capacity(f.relationships.len());
            for r in f.relationships {
                let union_feature = match &r.union_feature_ref {
                    Some(refstr) => Some(resolver.fetch(refstr, &ctx)?),
                    None => None,
                };
                let mut rel = RelationshipInstance::new(r.subject, r.object, r.predicates);
                rel.union_feature = union_feature;
                rel.pair_track_id = r.track_id;
                relationships.push(rel);
            }
            frames.push(FrameAnnotation {
                frame_index: f.frame_index,
                proposals,
                relationships,
            });
        }
        videos.push(VideoAnnotation {
            video_id: v.video_id,
            frames,
        });
    }

    let dataset = Dataset {
        class_names: raw.class_names,
        predicate_names: raw.predicate_names,
        predicate_type_sizes: raw.predicate_type_sizes,
        videos,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Save a dataset as `<dir>/annotations.json` plus a `features.stkt` sidecar
/// (written only when any tensor payloads are present).
pub fn save_annotations(dataset: &Dataset, dir: &Path, feature_dtype: Dtype) -> Result<()> {
    fs::create_dir_all(dir)?;
    let has_payload = dataset.videos.iter().any(|v| {
        v.frames.iter().any(|f| {
            f.proposals.iter().any(|p| p.visual_feature.is_some())
                || f.relationships.iter().any(|r| r.union_feature.is_some())
        })
    });
    let mut writer = if has_payload {
        Some(TensorFileWriter::create(
            &dir.join("features.stkt"),
            "features.stkt",
        )?)
    } else {
        None
    };

    let mut videos = Vec::with_capacity(dataset.videos.len());
    for v in &dataset.videos {
        let mut frames = Vec::with_capacity(v.frames.len());
        for f in &v.frames {
            let mut proposals = Vec::with_capacity(f.proposals.len());
            for p in &f.proposals {
                let feature_ref = match (&p.visual_feature, writer.as_mut()) {
                    (Some(t), Some(w)) => Some(w.append(t, feature_dtype)?),
                    _ => None,
                };
                proposals.push(ProposalJson {
                    bbox: p.bbox.to_array(),
                    class_distribution: p.class_distribution.clone(),
                    feature_ref,
                });
            }
            let mut relationships = Vec::with_capacity(f.relationships.len());
            for r in &f.relationships {
                let union_feature_ref = match (&r.union_feature, writer.as_mut()) {
                    (Some(t), Some(w)) => Some(w.append(t, feature_dtype)?),
                    _ => None,
                };
                relationships.push(RelationshipJson {
                    subject: r.subject_index,
                    object: r.object_index,
                    predicates: r.predicates.clone(),
                    union_feature_ref,
                    track_id: r.pair_track_id,
                });
            }
            frames.push(FrameJson {
                frame_index: f.frame_index,
                proposals,
                relationships,
            });
        }
        videos.push(VideoJson {
            video_id: v.video_id.clone(),
            frames,
        });
    }
    if let Some(w) = writer {
        w.finish()?;
    }

    let json = DatasetJson {
        class_names: dataset.class_names.clone(),
        predicate_names: dataset.predicate_names.clone(),
        predicate_type_sizes: dataset.predicate_type_sizes.clone(),
        videos,
    };
    let text = serde_json::to_string_pretty(&json)?;
    fs::write(dir.join("annotations.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        let proposals = vec![
            ObjectProposal::ground_truth(BBox::new(0.0, 0.0, 2.0, 2.0), 0, 2, None),
            ObjectProposal::ground_truth(BBox::new(3.0, 3.0, 5.0, 5.0), 1, 2, None),
        ];
        Dataset {
            class_names: vec!["person".into(), "cup".into()],
            predicate_names: vec!["hold".into(), "drink".into()],
            predicate_type_sizes: vec![],
            videos: vec![VideoAnnotation {
                video_id: "v0".into(),
                frames: vec![FrameAnnotation {
                    frame_index: 0,
                    proposals,
                    relationships: vec![RelationshipInstance::new(0, 1, vec![0])],
                }],
            }],
        }
    }

    #[test]
    fn minimal_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        save_annotations(&tiny_dataset(), dir.path(), Dtype::F32).unwrap();
        let ds = load_annotations(&dir.path().join("annotations.json")).unwrap();
        assert_eq!(ds.videos.len(), 1);
        assert_eq!(ds.videos[0].frames[0].relationships.len(), 1);
    }

    #[test]
    fn self_relationship_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny_dataset();
        ds.videos[0].frames[0].relationships[0].object_index = 0;
        save_annotations(&ds, dir.path(), Dtype::F32).unwrap();
        let err = load_annotations(&dir.path().join("annotations.json")).unwrap_err();
        assert!(matches!(err, CoreError::Integrity { .. }), "{err}");
    }

    #[test]
    fn schema_violation_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.json");
        fs::write(&path, "{\"class_names\": 3}").unwrap();
        let err = load_annotations(&path).unwrap_err();
        assert!(err.to_string().contains("annotations.json"), "{err}");
    }
}
