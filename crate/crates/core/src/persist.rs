//! Versioned JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::json_error;
use crate::detector::DetectionModel;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "aspca-model";
pub const MODEL_VERSION: u32 = 1;

/// Tolerance on `|VᵀV − I|` when loading; looser than construction so that
/// hand-edited or foreign files round to a few digits still load.
pub const LOAD_ORTHONORMAL_TOL: f64 = 1e-4;

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

pub fn model_to_json(model: &DetectionModel) -> Result<String> {
    if !model.threshold.is_finite() {
        return Err(Error::InvalidModel(
            "cannot store a non-finite threshold".into(),
        ));
    }
    let env = Envelope {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        model,
    };
    serde_json::to_string_pretty(&env).map_err(|e| Error::InvalidModel(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<DetectionModel> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_str::<serde_json::Value>(text)
        .map_err(|e| json_error(text, &e))
        .and_then(|v| {
            serde_json::from_value(v).map_err(|e| Error::InvalidModel(format!("model header: {e}")))
        })?;
    if header.format != MODEL_FORMAT {
        return Err(Error::InvalidModel(format!(
            "unknown format '{}'",
            header.format
        )));
    }
    if header.version != MODEL_VERSION {
        return Err(Error::InvalidModel(format!(
            "model version {} is not supported (expected {MODEL_VERSION})",
            header.version
        )));
    }
    let env: Envelope<DetectionModel> =
        serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
    env.model.validate(LOAD_ORTHONORMAL_TOL)?;
    Ok(env.model)
}

pub fn save_model(model: &DetectionModel, path: &Path) -> Result<()> {
    let mut text = model_to_json(model)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DetectionModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PreprocessSpec;
    use crate::matrix::Matrix;

    fn sample() -> DetectionModel {
        let s = 0.5f64.sqrt();
        let v = Matrix::from_rows(&[vec![s, 0.0], vec![-s, 0.0], vec![0.0, 1.0]]).unwrap();
        let names: Vec<String> = vec!["A".into(), "B".into(), "C".into()];
        DetectionModel::new(v, 0.25, names.clone(), PreprocessSpec::identity(names)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = sample();
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let text = model_to_json(&sample()).unwrap();
        let cut = &text[..text.len() / 2];
        match model_from_json(cut) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut.len() && offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_version_and_bad_loadings() {
        let text = model_to_json(&sample()).unwrap();
        let wrong = text.replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(
            model_from_json(&wrong),
            Err(Error::InvalidModel(_))
        ));

        let mut m = sample();
        m.v_abnormal[(2, 1)] = 1.01;
        let env = serde_json::json!({"format": MODEL_FORMAT, "version": MODEL_VERSION, "model": m});
        assert!(matches!(
            model_from_json(&env.to_string()),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn non_finite_threshold_is_not_stored() {
        let mut m = sample();
        m.threshold = f64::INFINITY;
        assert!(model_to_json(&m).is_err());
    }
}
