//! File formats: JSONL datasets and observation stores, posterior particle
//! files, and coefficient files.
//!
//! One observation per line:
//!
//! ```json
//! {"z":{"age_group":"young","ses":0.4,"rain":1,"slack":0.2,"disability":0},
//!  "routes":[{"t":31.2,"c":12.0,"tw":4.5}, ...],
//!  "choice":2, "day":14, "day_type":"weekday"}
//! ```
//!
//! `day`/`day_type` are optional for plain datasets and required (`day`) for
//! observation stores. Particle files start with one metadata line (format
//! version, dimensions, day, scaler) followed by one JSON array per draw.
//! All numbers round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::choice::{ParameterMatrix, PARAM_DIM};
use crate::dataset::Dataset;
use crate::dynamic::{DayType, ObservationStore};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::particles::ParticleSet;
use crate::routes::{Observation, OfferSet, RouteAttributes};
use crate::scaler::Scaler;

const PARTICLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    z: FeatureVector,
    routes: Vec<RouteAttributes>,
    choice: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    day: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    day_type: Option<DayType>,
}

impl ObservationRecord {
    fn to_observation(&self, line: usize) -> Result<Observation> {
        for r in &self.routes {
            r.validate_raw()
                .map_err(|e| Error::parse(line, e.to_string()))?;
        }
        let offers = OfferSet::new(self.routes.clone())
            .map_err(|e| Error::parse(line, e.to_string()))?;
        Observation::new(self.z, offers, self.choice)
            .map_err(|e| Error::parse(line, e.to_string()))
    }
}

fn parse_lines<R: Read>(reader: R) -> Result<Vec<(usize, ObservationRecord)>> {
    let reader = BufReader::new(reader);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ObservationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        records.push((line_no, record));
    }
    Ok(records)
}

/// Reads a JSONL dataset; day metadata, if present, is ignored. An empty
/// file is an empty dataset.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut observations = Vec::new();
    for (line_no, record) in parse_lines(file)? {
        observations.push(record.to_observation(line_no)?);
    }
    Ok(Dataset::new(observations))
}

/// Writes observations as JSONL, one per line, without day metadata.
pub fn write_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for obs in &data.observations {
        let record = ObservationRecord {
            z: obs.features,
            routes: obs.offers.routes().to_vec(),
            choice: obs.choice(),
            day: None,
            day_type: None,
        };
        serde_json::to_writer(&mut out, &record).map_err(io_error)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an observation store; every line must carry a `day`, and a missing
/// `day_type` defaults to weekday.
pub fn read_store(path: impl AsRef<Path>) -> Result<ObservationStore> {
    let file = File::open(path)?;
    let mut store = ObservationStore::new();
    for (line_no, record) in parse_lines(file)? {
        let day = record
            .day
            .ok_or_else(|| Error::parse(line_no, "store record is missing \"day\""))?;
        let day_type = record.day_type.unwrap_or(DayType::Weekday);
        let obs = record.to_observation(line_no)?;
        store
            .push(obs, day, day_type)
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
    }
    Ok(store)
}

pub fn write_store(store: &ObservationStore, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for entry in store.entries() {
        let record = ObservationRecord {
            z: entry.observation.features,
            routes: entry.observation.offers.routes().to_vec(),
            choice: entry.observation.choice(),
            day: Some(entry.day_recorded),
            day_type: Some(entry.day_type),
        };
        serde_json::to_writer(&mut out, &record).map_err(io_error)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ParticleMetadata {
    format_version: u32,
    d: usize,
    n_sample: usize,
    day: i64,
    scaler: Scaler,
}

/// Persists a posterior particle set together with the scaler it was fitted
/// under.
pub fn save_particles(
    particles: &ParticleSet,
    scaler: &Scaler,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let meta = ParticleMetadata {
        format_version: PARTICLE_FORMAT_VERSION,
        d: particles.dim(),
        n_sample: particles.len(),
        day: particles.day,
        scaler: scaler.clone(),
    };
    serde_json::to_writer(&mut out, &meta).map_err(io_error)?;
    out.write_all(b"\n")?;
    for row in particles.rows() {
        serde_json::to_writer(&mut out, row).map_err(io_error)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a particle file, checking the format version and the model
/// dimension. Truncated files report the byte offset where data ran out.
pub fn load_particles(path: impl AsRef<Path>) -> Result<(ParticleSet, Scaler)> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut offset: usize = 0;
    let mut line = String::new();

    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(Error::parse(1, "empty particle file (byte offset 0)"));
    }
    let meta: ParticleMetadata = serde_json::from_str(&line)
        .map_err(|e| Error::parse(1, format!("bad metadata record: {e}")))?;
    offset += n;

    if meta.format_version != PARTICLE_FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported particle format version {} (expected {PARTICLE_FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.d != PARAM_DIM {
        return Err(Error::validation(format!(
            "particle dimension {} does not match the model dimension {PARAM_DIM}",
            meta.d
        )));
    }

    let mut rows = Vec::with_capacity(meta.n_sample);
    for i in 0..meta.n_sample {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            return Err(Error::parse(
                i + 2,
                format!(
                    "particle file truncated at byte offset {offset}: expected {} draws, found {i}",
                    meta.n_sample
                ),
            ));
        }
        let row: Vec<f64> = serde_json::from_str(&line)
            .map_err(|e| Error::parse(i + 2, format!("bad draw record: {e}")))?;
        if row.len() != meta.d {
            return Err(Error::parse(
                i + 2,
                format!("draw has dimension {}, expected {}", row.len(), meta.d),
            ));
        }
        offset += n;
        rows.push(row);
    }
    Ok((ParticleSet::new(rows, meta.day)?, meta.scaler))
}

/// Coefficient file layout shared by ground-truth inputs and posterior
/// summaries, so summary output can be fed back in as generator truth.
#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsFile {
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
}

impl ParamsFile {
    pub fn from_matrix(m: &ParameterMatrix) -> Self {
        Self {
            a2: m.a2.to_vec(),
            a3: m.a3.to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<ParameterMatrix> {
        if self.a2.len() != FEATURE_DIM || self.a3.len() != FEATURE_DIM {
            return Err(Error::validation(format!(
                "coefficient rows must have length {FEATURE_DIM}, got {} and {}",
                self.a2.len(),
                self.a3.len()
            )));
        }
        let mut flat = Vec::with_capacity(PARAM_DIM);
        flat.extend_from_slice(&self.a2);
        flat.extend_from_slice(&self.a3);
        ParameterMatrix::from_flat(&flat)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryFileProbe {
    mean: ParamsFile,
}

/// Reads a coefficient matrix from either a bare `{"a2": [...], "a3": [...]}`
/// file or a posterior-summary file (whose `mean` field is used).
pub fn read_params(path: impl AsRef<Path>) -> Result<ParameterMatrix> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(params) = serde_json::from_str::<ParamsFile>(&text) {
        return params.to_matrix();
    }
    let summary: SummaryFileProbe = serde_json::from_str(&text)
        .map_err(|e| Error::parse(1, format!("not a coefficient or summary file: {e}")))?;
    summary.mean.to_matrix()
}

pub fn write_params(params: &ParameterMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &ParamsFile::from_matrix(params)).map_err(io_error)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn io_error(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}
