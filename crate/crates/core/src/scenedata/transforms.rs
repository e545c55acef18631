use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Camera, Dataset, Image, View};
use crate::error::{Error, Result};

const DEFAULT_NEAR: f32 = 2.0;
const DEFAULT_FAR: f32 = 6.0;

/// One `transforms_{split}.json` file. Unknown keys are ignored so that
/// files from other tools load unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub camera_angle_x: f32,
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Relative to the dataset directory; `.png` is appended when the path
    /// has no extension.
    pub file_path: String,
    /// Row-major camera-to-world matrix.
    pub transform_matrix: [[f32; 4]; 4],
}

fn image_path(root: &Path, file_path: &str) -> PathBuf {
    let p = root.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

fn read_split(
    root: &Path,
    split: &str,
    white_background: bool,
) -> Result<(TransformsFile, Vec<View>)> {
    let path = root.join(format!("transforms_{split}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::data(&path, e.to_string()))?;
    let file: TransformsFile = serde_json::from_str(&text)
        .map_err(|e| Error::data(&path, format!("malformed JSON: {e}")))?;
    if !(file.camera_angle_x > 0.0 && file.camera_angle_x < std::f32::consts::PI) {
        return Err(Error::data(
            &path,
            format!("camera_angle_x {} out of (0, π)", file.camera_angle_x),
        ));
    }
    let mut views = Vec::with_capacity(file.frames.len());
    for (i, frame) in file.frames.iter().enumerate() {
        let img_path = image_path(root, &frame.file_path);
        let image = Image::load_png(&img_path, white_background)?;
        let camera = Camera {
            pose: frame.transform_matrix,
            width: image.width,
            height: image.height,
            focal: Camera::focal_from_fov(image.width, file.camera_angle_x),
        };
        camera
            .validate()
            .map_err(|reason| Error::data(&path, format!("frame {i}: {reason}")))?;
        views.push(View {
            camera,
            image,
            file_path: frame.file_path.clone(),
        });
    }
    Ok((file, views))
}

/// Loads `transforms_train.json` and `transforms_test.json` with their images.
pub fn load_dataset(root: &Path, white_background: bool) -> Result<Dataset> {
    let (train_file, train) = read_split(root, "train", white_background)?;
    let (_, test) = read_split(root, "test", white_background)?;
    if train.is_empty() {
        return Err(Error::data(
            root.join("transforms_train.json"),
            "no training frames",
        ));
    }
    let (w, h) = (train[0].image.width, train[0].image.height);
    if let Some(v) = train
        .iter()
        .chain(&test)
        .find(|v| (v.image.width, v.image.height) != (w, h))
    {
        return Err(Error::data(
            image_path(root, &v.file_path),
            format!(
                "image is {}×{}, expected {w}×{h}",
                v.image.width, v.image.height
            ),
        ));
    }
    let near = train_file.near.unwrap_or(DEFAULT_NEAR);
    let far = train_file.far.unwrap_or(DEFAULT_FAR);
    if !(near >= 0.0 && near < far) {
        return Err(Error::data(
            root.join("transforms_train.json"),
            format!("bad near/far {near}/{far}"),
        ));
    }
    Ok(Dataset {
        train,
        test,
        near,
        far,
        white_background,
        camera_angle_x: train_file.camera_angle_x,
    })
}

/// Writes both splits as `transforms_{split}.json` plus `{split}/r_{i}.png`.
pub fn write_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    for (split, views) in [("train", &dataset.train), ("test", &dataset.test)] {
        fs::create_dir_all(root.join(split))?;
        let mut frames = Vec::with_capacity(views.len());
        for (i, view) in views.iter().enumerate() {
            let file_path = format!("{split}/r_{i}.png");
            view.image.save_png(&root.join(&file_path))?;
            frames.push(FrameRecord {
                file_path,
                transform_matrix: view.camera.pose,
            });
        }
        let file = TransformsFile {
            camera_angle_x: dataset.camera_angle_x,
            frames,
            near: Some(dataset.near),
            far: Some(dataset.far),
        };
        fs::write(
            root.join(format!("transforms_{split}.json")),
            serde_json::to_string_pretty(&file)?,
        )?;
    }
    Ok(())
}
