//! Synthetic laser-processing data.
//!
//! Process points are sampled on a window that is approximately uniform in
//! (normalized enthalpy, power), scan speed recovered in closed form.
//! Fields come from the quasi-steady moving point-source (Rosenthal)
//! solution capped at the boiling temperature, plus a smooth free-surface
//! metal-fraction profile whose depression depth grows with normalized
//! enthalpy. Everything is deterministic in (point, grid, constants).
//!
//! Temperatures are carried normalized by `t_ref` (3000 K) in memory and on
//! disk; lengths are SI meters.

use crate::error::{Error, Result};
use crate::num::sigmoid;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConstants {
    /// Absorptivity.
    pub eta: f64,
    /// Density [kg/m^3].
    pub rho: f64,
    /// Specific heat capacity [J/(kg K)].
    pub c_p: f64,
    /// Temperature rise to melting [K].
    pub delta_t_m: f64,
    /// Thermal diffusivity [m^2/s].
    pub diffusivity: f64,
    /// Beam radius (1/e^2) [m].
    pub sigma_beam: f64,
    /// Latent heat of fusion [J/kg]; carried for completeness, not used by
    /// the enthalpy criterion.
    pub latent_heat: f64,
    pub t_boil: f64,
    pub t_solidus: f64,
    /// Not given by the source material data; configurable.
    pub t_liquidus: f64,
    pub t_ref: f64,
    /// Ambient temperature [K].
    pub t_ambient: f64,
}

impl Default for MaterialConstants {
    fn default() -> Self {
        MaterialConstants {
            eta: 0.35,
            rho: 4420.0,
            c_p: 750.0,
            delta_t_m: 1573.0,
            diffusivity: 8.1e-6,
            sigma_beam: 50e-6,
            latent_heat: 3.45e5,
            t_boil: 3123.0,
            t_solidus: 1873.0,
            t_liquidus: 1923.0,
            t_ref: 3000.0,
            t_ambient: 300.0,
        }
    }
}

impl MaterialConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_solidus < self.t_liquidus && self.t_liquidus < self.t_boil) {
            return Err(Error::config(
                "require t_solidus < t_liquidus < t_boil",
            ));
        }
        Ok(())
    }

    /// Thermal conductivity k = rho * c_p * D.
    pub fn conductivity(&self) -> f64 {
        self.rho * self.c_p * self.diffusivity
    }

    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("serializable constants");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reference scales used for normalization.
pub const POWER_SCALE: f64 = 10.0;
pub const SPEED_SCALE: f64 = 0.1;
pub const ENTHALPY_SCALE: f64 = 7.5;

pub const POWER_RANGE: (f64, f64) = (40.0, 190.0);
pub const SPEED_RANGE: (f64, f64) = (0.1, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessPoint {
    /// Laser power [W].
    pub power: f64,
    /// Scan speed [m/s].
    pub v_scan: f64,
    /// Dimensionless normalized enthalpy.
    pub h_star: f64,
}

impl ProcessPoint {
    /// Model input values (P, V, H*) divided by their reference scales.
    pub fn normalized(&self) -> [f64; 3] {
        [
            self.power / POWER_SCALE,
            self.v_scan / SPEED_SCALE,
            self.h_star / ENTHALPY_SCALE,
        ]
    }
}

/// Normalized enthalpy: eta P / (rho c_p dT_m sqrt(pi D sigma^3 V)).
pub fn h_star(power: f64, v_scan: f64, mat: &MaterialConstants) -> Result<f64> {
    if v_scan <= 0.0 {
        return Err(Error::domain(format!("non-positive scan speed {v_scan}")));
    }
    let denom = mat.rho
        * mat.c_p
        * mat.delta_t_m
        * (std::f64::consts::PI * mat.diffusivity * mat.sigma_beam.powi(3) * v_scan).sqrt();
    Ok(mat.eta * power / denom)
}

/// Closed-form inversion of [`h_star`] for the scan speed.
pub fn v_scan_for(h: f64, power: f64, mat: &MaterialConstants) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::domain(format!("non-positive enthalpy target {h}")));
    }
    let k = mat.rho
        * mat.c_p
        * mat.delta_t_m
        * (std::f64::consts::PI * mat.diffusivity * mat.sigma_beam.powi(3)).sqrt();
    let sqrt_v = mat.eta * power / (k * h);
    Ok(sqrt_v * sqrt_v)
}

#[derive(Debug, Clone)]
pub struct WindowSample {
    pub points: Vec<ProcessPoint>,
    /// Candidates dropped because the recovered scan speed left its bounds.
    pub n_rejected: usize,
}

/// Stratified-uniform sampling in (H*, P); scan speed recovered in closed
/// form, candidates outside the speed bounds rejected.
pub fn sample_window(
    n_points: usize,
    h_range: (f64, f64),
    p_range: (f64, f64),
    mat: &MaterialConstants,
    seed: u64,
) -> Result<WindowSample> {
    if n_points == 0 || h_range.0 <= 0.0 || h_range.1 <= h_range.0 || p_range.1 <= p_range.0 {
        return Err(Error::Sampling("empty or inverted sampling window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Latin-hypercube strata per axis, independently permuted.
    let mut h_order: Vec<usize> = (0..n_points).collect();
    let mut p_order: Vec<usize> = (0..n_points).collect();
    for i in (1..n_points).rev() {
        h_order.swap(i, rng.gen_range(0..=i));
    }
    for i in (1..n_points).rev() {
        p_order.swap(i, rng.gen_range(0..=i));
    }
    let mut points = Vec::with_capacity(n_points);
    let mut n_rejected = 0usize;
    for i in 0..n_points {
        let uh = (h_order[i] as f64 + rng.gen_range(0.0..1.0)) / n_points as f64;
        let up = (p_order[i] as f64 + rng.gen_range(0.0..1.0)) / n_points as f64;
        let h = h_range.0 + uh * (h_range.1 - h_range.0);
        let power = p_range.0 + up * (p_range.1 - p_range.0);
        let v = v_scan_for(h, power, mat)?;
        if !(SPEED_RANGE.0..=SPEED_RANGE.1).contains(&v) {
            n_rejected += 1;
            continue;
        }
        points.push(ProcessPoint {
            power,
            v_scan: v,
            h_star: h,
        });
    }
    if points.is_empty() {
        return Err(Error::Sampling(format!(
            "all {n_points} candidates rejected: no feasible scan speed in the window"
        )));
    }
    Ok(WindowSample { points, n_rejected })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub dims: [usize; 3],
    /// Physical extent [m] per axis.
    pub extent: [f64; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            dims: [16, 16, 12],
            extent: [0.9e-3, 0.4e-3, 0.3e-3],
        }
    }
}

impl GridSpec {
    pub fn cell(&self) -> [f64; 3] {
        [
            self.extent[0] / self.dims[0] as f64,
            self.extent[1] / self.dims[1] as f64,
            self.extent[2] / self.dims[2] as f64,
        ]
    }
}

/// Knobs of the synthetic free-surface profile. Purely synthetic stand-ins;
/// not calibrated against any solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Source position along the scan axis, as a fraction of the extent.
    pub source_frac: f64,
    /// Undisturbed free-surface height as a fraction of the z extent.
    pub surface_frac: f64,
    /// Maximum depression depth [m] of the keyhole proxy.
    pub depth_max: f64,
    /// Sigmoid steepness of depth vs normalized enthalpy.
    pub depth_steepness: f64,
    /// Enthalpy at which the depression reaches half depth.
    pub depth_h_center: f64,
    /// Lateral radius of the depression [m].
    pub depth_radius: f64,
    /// Interface width of the metal-fraction profile [m].
    pub iface_width: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            source_frac: 2.0 / 3.0,
            surface_frac: 2.0 / 3.0,
            depth_max: 0.10e-3,
            depth_steepness: 0.6,
            depth_h_center: 8.0,
            depth_radius: 0.06e-3,
            iface_width: 0.03e-3,
        }
    }
}

/// One sample: process point plus normalized temperature and metal fraction
/// on the grid.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub point: ProcessPoint,
    pub grid: GridSpec,
    /// T / t_ref.
    pub t_norm: Array3<f64>,
    /// Metal fraction in [0, 1].
    pub alpha: Array3<f64>,
}

/// Quasi-steady analytic fields for one process point.
///
/// Temperature: T = T0 + eta P / (2 pi k r) * exp(-V (r + xi) / (2 D)) with
/// k = rho c_p D, xi the moving-frame scan coordinate, capped at t_boil;
/// radii within half a cell of the source are floored there. Metal fraction:
/// smooth profile, 1 in bulk metal, 0 above a free surface whose depression
/// deepens with normalized enthalpy.
pub fn generate_fields(
    point: &ProcessPoint,
    grid: &GridSpec,
    mat: &MaterialConstants,
    synth: &SynthParams,
) -> Result<FieldSample> {
    mat.validate()?;
    let [nx, ny, nz] = grid.dims;
    let cell = grid.cell();
    let src = [
        synth.source_frac * grid.extent[0],
        0.5 * grid.extent[1],
        synth.surface_frac * grid.extent[2],
    ];
    let k_cond = mat.conductivity();
    let r_floor = 0.5 * cell.iter().cloned().fold(f64::INFINITY, f64::min);
    let depth_amp = synth.depth_max
        * sigmoid(synth.depth_steepness * (point.h_star - synth.depth_h_center));

    let mut t_norm = Array3::zeros((nx, ny, nz));
    let mut alpha = Array3::zeros((nx, ny, nz));
    for xi in 0..nx {
        let x = (xi as f64 + 0.5) * cell[0];
        for yi in 0..ny {
            let y = (yi as f64 + 0.5) * cell[1];
            let lateral2 = (x - src[0]).powi(2) + (y - src[1]).powi(2);
            let depth = depth_amp * (-lateral2 / (2.0 * synth.depth_radius.powi(2))).exp();
            let z_surface = synth.surface_frac * grid.extent[2] - depth;
            for zi in 0..nz {
                let z = (zi as f64 + 0.5) * cell[2];
                let dx = x - src[0];
                let r = (dx * dx + (y - src[1]).powi(2) + (z - src[2]).powi(2))
                    .sqrt()
                    .max(r_floor);
                let decay = (-point.v_scan * (r + dx) / (2.0 * mat.diffusivity)).exp();
                let t = mat.t_ambient
                    + mat.eta * point.power / (2.0 * std::f64::consts::PI * k_cond * r) * decay;
                t_norm[(xi, yi, zi)] = t.min(mat.t_boil) / mat.t_ref;
                alpha[(xi, yi, zi)] = sigmoid((z_surface - z) / synth.iface_width);
            }
        }
    }
    Ok(FieldSample {
        point: *point,
        grid: *grid,
        t_norm,
        alpha,
    })
}

/// Smooth metal mask from the reference metal fraction:
/// g = (tanh(k (alpha - 1/2)) + 1) / 2.
pub fn metal_mask(alpha: &Array3<f64>, k_sharp: f64) -> Array3<f64> {
    alpha.mapv(|a| 0.5 * ((k_sharp * (a - 0.5)).tanh() + 1.0))
}

/// Piecewise-linear liquid fraction between solidus and liquidus, applied to
/// a normalized temperature field.
pub fn liquid_fraction(t_norm: &Array3<f64>, mat: &MaterialConstants) -> Array3<f64> {
    let s = mat.t_solidus / mat.t_ref;
    let l = mat.t_liquidus / mat.t_ref;
    t_norm.mapv(|t| ((t - s) / (l - s)).clamp(0.0, 1.0))
}

/// Masked evaluation fields: blended temperature
/// `T~ = T_boil + g (T - T_boil)`, liquid fraction from the input
/// temperature multiplied by the metal mask, and the mask itself.
pub fn mask_fields(
    t_norm: &Array3<f64>,
    alpha_ref: &Array3<f64>,
    mat: &MaterialConstants,
    k_sharp: f64,
) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
    let g = metal_mask(alpha_ref, k_sharp);
    let t_b = mat.t_boil / mat.t_ref;
    let mut t_tilde = t_norm.clone();
    ndarray::Zip::from(&mut t_tilde).and(&g).for_each(|t, &gv| {
        *t = t_b + gv * (*t - t_b);
    });
    let mut f_l = liquid_fraction(t_norm, mat);
    f_l *= &g;
    (t_tilde, f_l, g)
}

pub const MASK_SHARPNESS_DEFAULT: f64 = 20.0;

// ---------------------------------------------------------------------------
// On-disk dataset format
// ---------------------------------------------------------------------------

const SAMPLE_MAGIC: &[u8; 8] = b"HQFNODS1";
const SAMPLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleHeader {
    version: u32,
    point: ProcessPoint,
    grid: GridSpec,
    material_hash: String,
    t_ref: f64,
}

/// Write one sample: text header, then raw little-endian f32 arrays for
/// T/t_ref and alpha.
pub fn write_sample(path: &Path, sample: &FieldSample, mat: &MaterialConstants) -> Result<()> {
    let header = SampleHeader {
        version: SAMPLE_VERSION,
        point: sample.point,
        grid: sample.grid,
        material_hash: mat.hash(),
        t_ref: mat.t_ref,
    };
    let header_text =
        toml::to_string(&header).map_err(|e| Error::Data(format!("header encode: {e}")))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(SAMPLE_MAGIC)?;
    f.write_all(&SAMPLE_VERSION.to_le_bytes())?;
    f.write_all(&(header_text.len() as u64).to_le_bytes())?;
    f.write_all(header_text.as_bytes())?;
    for v in sample.t_norm.iter() {
        f.write_all(&(*v as f32).to_le_bytes())?;
    }
    for v in sample.alpha.iter() {
        f.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_sample(path: &Path) -> Result<FieldSample> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[0..8] != SAMPLE_MAGIC {
        return Err(Error::Data(format!("{}: bad sample magic", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < 20 + header_len {
        return Err(Error::Data("truncated sample header".into()));
    }
    let header: SampleHeader = toml::from_str(
        std::str::from_utf8(&bytes[20..20 + header_len])
            .map_err(|e| Error::Data(format!("header utf8: {e}")))?,
    )
    .map_err(|e| Error::Data(format!("header decode: {e}")))?;
    let [nx, ny, nz] = header.grid.dims;
    let n = nx * ny * nz;
    let payload = &bytes[20 + header_len..];
    if payload.len() != 2 * n * 4 {
        return Err(Error::Data(format!(
            "sample payload is {} bytes, expected {}",
            payload.len(),
            2 * n * 4
        )));
    }
    let read_field = |offset: usize| -> Array3<f64> {
        Array3::from_shape_vec(
            (nx, ny, nz),
            (0..n)
                .map(|i| {
                    let o = offset + 4 * i;
                    f32::from_le_bytes(payload[o..o + 4].try_into().unwrap()) as f64
                })
                .collect(),
        )
        .expect("shape matches")
    };
    Ok(FieldSample {
        point: header.point,
        grid: header.grid,
        t_norm: read_field(0),
        alpha: read_field(n * 4),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub split: Split,
    pub power: f64,
    pub v_scan: f64,
    pub h_star: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub seed: u64,
    pub material: MaterialConstants,
    pub synth: SynthParams,
    pub grid: GridSpec,
    pub n_rejected: usize,
    pub samples: Vec<IndexEntry>,
}

pub const INDEX_FILE: &str = "index.toml";

/// Generate a full dataset directory: sample files plus the split index.
/// Split assignment cycles train/train/.../val/test over the shuffled point
/// order with the given fractions.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    dir: &Path,
    n_points: usize,
    h_range: (f64, f64),
    p_range: (f64, f64),
    grid: &GridSpec,
    mat: &MaterialConstants,
    synth: &SynthParams,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetIndex> {
    std::fs::create_dir_all(dir)?;
    let window = sample_window(n_points, h_range, p_range, mat, seed)?;
    let n = window.points.len();
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_val + n_test >= n {
        return Err(Error::Sampling(
            "validation and test fractions leave no training samples".into(),
        ));
    }
    let mut entries = Vec::with_capacity(n);
    for (i, point) in window.points.iter().enumerate() {
        let split = if i < n - n_val - n_test {
            Split::Train
        } else if i < n - n_test {
            Split::Val
        } else {
            Split::Test
        };
        let file = format!("sample_{i:04}.bin");
        let sample = generate_fields(point, grid, mat, synth)?;
        write_sample(&dir.join(&file), &sample, mat)?;
        entries.push(IndexEntry {
            file,
            split,
            power: point.power,
            v_scan: point.v_scan,
            h_star: point.h_star,
        });
    }
    let index = DatasetIndex {
        seed,
        material: *mat,
        synth: *synth,
        grid: *grid,
        n_rejected: window.n_rejected,
        samples: entries,
    };
    let text = toml::to_string_pretty(&index).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(dir.join(INDEX_FILE), text)?;
    Ok(index)
}

pub fn load_index(dir: &Path) -> Result<DatasetIndex> {
    let text = std::fs::read_to_string(dir.join(INDEX_FILE))?;
    toml::from_str(&text).map_err(|e| Error::Data(format!("index decode: {e}")))
}

/// Load all samples of one split, in index order.
pub fn load_split(dir: &Path, index: &DatasetIndex, split: Split) -> Result<Vec<FieldSample>> {
    let mut out = Vec::new();
    for entry in index.samples.iter().filter(|e| e.split == split) {
        out.push(read_sample(&dir.join(&entry.file))?);
    }
    Ok(out)
}

pub fn sample_paths(dir: &Path, index: &DatasetIndex, split: Split) -> Vec<PathBuf> {
    index
        .samples
        .iter()
        .filter(|e| e.split == split)
        .map(|e| dir.join(&e.file))
        .collect()
}
