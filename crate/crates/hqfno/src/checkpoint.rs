//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 format version, u64 manifest length, manifest
//! JSON (config + tensor names/shapes + scaler metadata), then the tensor
//! payload as little-endian f64 in manifest order. Scaler EMA buffers are
//! stored as tensors alongside the trainable parameters, so a round trip is
//! bit-exact for f64 models.

use crate::error::{Error, Result};
use crate::mixer::ScalerMode;
use crate::model::{param_shapes, HybridFno, ModelConfig};
use crate::num::{r, Real};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"HQFNOCP1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScalerEntry {
    layer: usize,
    momentum: f64,
    epsilon: f64,
    initialized: bool,
    update_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    scalers: Vec<ScalerEntry>,
}

fn scaler_tensor_names(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    if config.c_q > 0 {
        for l in 0..config.layers {
            out.push((format!("layer{l}.scaler.min"), vec![2 * config.c_q]));
            out.push((format!("layer{l}.scaler.max"), vec![2 * config.c_q]));
        }
    }
    out
}

/// Serialize model parameters, scaler state, and configuration.
pub fn save_checkpoint<T: Real>(model: &HybridFno<T>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push_tensor = |name: String, shape: Vec<usize>, values: &mut dyn Iterator<Item = T>| {
        tensors.push(TensorEntry { name, shape });
        for v in values {
            let x = v.to_f64().expect("scalar convertible to f64");
            payload.extend_from_slice(&x.to_le_bytes());
        }
    };
    for (name, view) in model.visit_params() {
        push_tensor(name, view.shape().to_vec(), &mut view.iter().copied());
    }
    let mut scalers = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        if let Some(s) = &layer.spectral.scaler {
            push_tensor(
                format!("layer{l}.scaler.min"),
                vec![s.n_features()],
                &mut s.running_min.iter().copied(),
            );
            push_tensor(
                format!("layer{l}.scaler.max"),
                vec![s.n_features()],
                &mut s.running_max.iter().copied(),
            );
            scalers.push(ScalerEntry {
                layer: l,
                momentum: s.momentum.to_f64().unwrap(),
                epsilon: s.epsilon.to_f64().unwrap(),
                initialized: s.initialized,
                update_count: s.update_count,
            });
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        tensors,
        scalers,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::Load(format!("manifest encode: {e}")))?;
    let mut out = Vec::with_capacity(20 + manifest_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Expected on-disk size in bytes for a configuration's checkpoint payload
/// (tensors only, excluding header and manifest).
pub fn expected_payload_bytes(config: &ModelConfig) -> Result<usize> {
    let mut n: usize = param_shapes(config)?
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    n += scaler_tensor_names(config)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum::<usize>();
    Ok(n * 8)
}

/// Deserialize a checkpoint. Shapes are validated against the configuration
/// recorded in the manifest; any disagreement is a load error.
pub fn load_checkpoint<T: Real>(bytes: &[u8]) -> Result<HybridFno<T>> {
    if bytes.len() < 20 || &bytes[0..8] != MAGIC {
        return Err(Error::Load("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < 20 + manifest_len {
        return Err(Error::Load("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[20..20 + manifest_len])
        .map_err(|e| Error::Load(format!("manifest decode: {e}")))?;
    manifest
        .config
        .validate()
        .map_err(|e| Error::Load(format!("invalid config in manifest: {e}")))?;

    // The manifest tensor list must match the schema derived from the config.
    let mut expected = param_shapes(&manifest.config).map_err(|e| Error::Load(e.to_string()))?;
    expected.extend(scaler_tensor_names(&manifest.config));
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Load(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for ((en, es), te) in expected.iter().zip(&manifest.tensors) {
        if en != &te.name || es != &te.shape {
            return Err(Error::Load(format!(
                "tensor {} shape {:?} does not match config expectation {en} {es:?}",
                te.name, te.shape
            )));
        }
    }
    let payload = &bytes[20 + manifest_len..];
    let expected_bytes: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 8)
        .sum();
    if payload.len() != expected_bytes {
        return Err(Error::Load(format!(
            "payload is {} bytes, expected {expected_bytes}",
            payload.len()
        )));
    }

    // Build a model with the right schema, then overwrite every tensor.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = HybridFno::<T>::new(manifest.config.clone(), &mut rng)
        .map_err(|e| Error::Load(e.to_string()))?;
    let mut offset = 0usize;
    let mut read_into = |values: &mut dyn Iterator<Item = &mut T>| {
        for v in values {
            let x = f64::from_le_bytes(payload[offset..offset + 8].try_into().unwrap());
            *v = r(x);
            offset += 8;
        }
    };
    for (_, mut view) in model.visit_params_mut() {
        read_into(&mut view.iter_mut());
    }
    for layer in model.layers.iter_mut() {
        if let Some(s) = &mut layer.spectral.scaler {
            read_into(&mut s.running_min.iter_mut());
            read_into(&mut s.running_max.iter_mut());
        }
    }
    for entry in &manifest.scalers {
        let layer = model
            .layers
            .get_mut(entry.layer)
            .ok_or_else(|| Error::Load("scaler entry for missing layer".into()))?;
        let s = layer
            .spectral
            .scaler
            .as_mut()
            .ok_or_else(|| Error::Load("scaler entry for mixerless layer".into()))?;
        s.momentum = r(entry.momentum);
        s.epsilon = r(entry.epsilon);
        s.initialized = entry.initialized;
        s.update_count = entry.update_count;
        s.mode = ScalerMode::Inference;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_input_field, InputFeatures, MixerKind};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            channels: 3,
            set_modes: [2, 2, 2],
            c_q: 1,
            n_q: None,
            circuit_depth: 1,
            padding: 1,
            mixer_kind: MixerKind::Vqc,
            decoder_width: 4,
            decoder_layers: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = HybridFno::<f64>::new(small_config(), &mut rng).unwrap();
        let input = build_input_field::<f64>(&InputFeatures::default(), [6, 6, 4], [0.5, 0.5, 0.5]);
        model.forward(input.view(), true).unwrap();

        let bytes = save_checkpoint(&model).unwrap();
        let restored = load_checkpoint::<f64>(&bytes).unwrap();
        for ((n1, v1), (n2, v2)) in model.visit_params().iter().zip(&restored.visit_params()) {
            assert_eq!(n1, n2);
            assert_eq!(v1, v2, "{n1}");
        }
        for (a, b) in model.scalers().iter().zip(&restored.scalers()) {
            assert_eq!(a.running_min, b.running_min);
            assert_eq!(a.running_max, b.running_max);
            assert_eq!(a.initialized, b.initialized);
            assert_eq!(a.update_count, b.update_count);
        }
        // Saving the restored model reproduces the byte stream.
        assert_eq!(bytes, save_checkpoint(&restored).unwrap());
    }

    #[test]
    fn payload_size_is_predictable_from_schema() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = HybridFno::<f64>::new(small_config(), &mut rng).unwrap();
        let bytes = save_checkpoint(&model).unwrap();
        let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let payload_len = bytes.len() - 20 - manifest_len;
        assert_eq!(payload_len, expected_payload_bytes(&small_config()).unwrap());
    }

    #[test]
    fn tampered_config_fails_shape_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = HybridFno::<f64>::new(small_config(), &mut rng).unwrap();
        let bytes = save_checkpoint(&model).unwrap();
        // Edit c_q in the manifest JSON.
        let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let manifest_str = String::from_utf8(bytes[20..20 + manifest_len].to_vec()).unwrap();
        let edited = manifest_str.replace("\"c_q\":1", "\"c_q\":2");
        assert_ne!(manifest_str, edited);
        let mut tampered = Vec::new();
        tampered.extend_from_slice(&bytes[0..12]);
        tampered.extend_from_slice(&(edited.len() as u64).to_le_bytes());
        tampered.extend_from_slice(edited.as_bytes());
        tampered.extend_from_slice(&bytes[20 + manifest_len..]);
        let err = load_checkpoint::<f64>(&tampered).unwrap_err();
        assert!(matches!(err, Error::Load(_)), "{err}");
    }

    #[test]
    fn truncation_is_a_load_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = HybridFno::<f64>::new(small_config(), &mut rng).unwrap();
        let bytes = save_checkpoint(&model).unwrap();
        let err = load_checkpoint::<f64>(&bytes[..bytes.len() - 9]).unwrap_err();
        assert!(matches!(err, Error::Load(_)));
        let err = load_checkpoint::<f64>(&bytes[..10]).unwrap_err();
        assert!(matches!(err, Error::Load(_)));
    }
}
