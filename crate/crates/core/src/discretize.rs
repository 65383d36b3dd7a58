//! Post-discretization of continuous features: a single k-means codebook,
//! an ensemble of codebooks with distinct sizes over the full vector, or
//! product quantization over equal-width contiguous subvectors.
//!
//! Member codebook `n` is trained with seed `seed + n`, so adding a member to
//! an ensemble leaves the existing members (and their token streams) intact.
//!
//! Scheme files (`S3CB`, little-endian): magic, `u32` version 1, `u8` mode
//! (0 single, 1 ensemble, 2 pq), `u32` input dim, `u32` stream count, then per
//! stream `u32` K, `u32` dim and `K * dim` binary32 centroids.
//!
//! Token files are either CSV (`frame,z1,z2,...`) or `S3TK` binary: magic,
//! `u32` version 1, `u32` frames, `u32` streams, then `u32` indices row-major.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{check_magic, FeatureMatrix};
use crate::kmeans::{self, squared_distance, Codebook, TrainParams, TrainReport};

pub const SCHEME_MAGIC: [u8; 4] = *b"S3CB";
pub const SCHEME_VERSION: u32 = 1;
pub const TOKEN_MAGIC: [u8; 4] = *b"S3TK";
pub const TOKEN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Single,
    Ensemble,
    Pq,
}

impl Mode {
    fn code(self) -> u8 {
        match self {
            Mode::Single => 0,
            Mode::Ensemble => 1,
            Mode::Pq => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Mode::Single),
            1 => Ok(Mode::Ensemble),
            2 => Ok(Mode::Pq),
            other => Err(Error::Shape(format!("unknown scheme mode byte {other}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Single => "single",
            Mode::Ensemble => "ensemble",
            Mode::Pq => "pq",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Mode::Single),
            "ensemble" => Ok(Mode::Ensemble),
            "pq" => Ok(Mode::Pq),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?} (expected single, ensemble or pq)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeConfig {
    pub mode: Mode,
    /// One size per ensemble member; a single shared size otherwise.
    pub cluster_sizes: Vec<usize>,
    /// Subvector count for product quantization, 1 for the other modes.
    pub partitions: usize,
}

impl SchemeConfig {
    pub fn single(k: usize) -> Self {
        Self {
            mode: Mode::Single,
            cluster_sizes: vec![k],
            partitions: 1,
        }
    }

    pub fn ensemble(sizes: &[usize]) -> Self {
        Self {
            mode: Mode::Ensemble,
            cluster_sizes: sizes.to_vec(),
            partitions: 1,
        }
    }

    pub fn pq(k: usize, partitions: usize) -> Self {
        Self {
            mode: Mode::Pq,
            cluster_sizes: vec![k],
            partitions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.cluster_sizes.contains(&0) {
            return bad("cluster sizes must be at least 1".into());
        }
        match self.mode {
            Mode::Single | Mode::Pq if self.cluster_sizes.len() != 1 => bad(format!(
                "{} mode takes exactly one cluster size, got {}",
                self.mode,
                self.cluster_sizes.len()
            )),
            Mode::Single | Mode::Ensemble if self.partitions != 1 => bad(format!(
                "partitions apply to pq mode only (got {})",
                self.partitions
            )),
            Mode::Ensemble if self.cluster_sizes.is_empty() => {
                bad("ensemble needs at least one cluster size".into())
            }
            Mode::Ensemble => {
                for (i, k) in self.cluster_sizes.iter().enumerate() {
                    if self.cluster_sizes[..i].contains(k) {
                        return bad(format!("ensemble cluster sizes must differ; {k} repeats"));
                    }
                }
                Ok(())
            }
            Mode::Pq if self.partitions == 0 => bad("partitions must be at least 1".into()),
            _ => Ok(()),
        }
    }

    /// Validates against a concrete feature dimension.
    pub fn validate_for_dim(&self, dim: usize) -> Result<()> {
        self.validate()?;
        if self.mode == Mode::Pq && !dim.is_multiple_of(self.partitions) {
            return Err(Error::InvalidConfig(format!(
                "feature dimension {dim} is not divisible by {} partitions",
                self.partitions
            )));
        }
        Ok(())
    }

    pub fn n_streams(&self) -> usize {
        match self.mode {
            Mode::Single => 1,
            Mode::Ensemble => self.cluster_sizes.len(),
            Mode::Pq => self.partitions,
        }
    }

    fn stream_size(&self, n: usize) -> usize {
        match self.mode {
            Mode::Ensemble => self.cluster_sizes[n],
            Mode::Single | Mode::Pq => self.cluster_sizes[0],
        }
    }
}

/// Per-frame discrete indices, one column per stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    frames: usize,
    streams: usize,
    indices: Vec<u32>,
}

impl TokenSequence {
    pub fn new(frames: usize, streams: usize, indices: Vec<u32>) -> Result<Self> {
        if streams == 0 {
            return Err(Error::Shape(
                "token sequence needs at least one stream".into(),
            ));
        }
        if indices.len() != frames * streams {
            return Err(Error::Shape(format!(
                "{frames} frames x {streams} streams needs {} indices, got {}",
                frames * streams,
                indices.len()
            )));
        }
        Ok(Self {
            frames,
            streams,
            indices,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.indices
    }

    pub fn get(&self, frame: usize, stream: usize) -> u32 {
        self.indices[frame * self.streams + stream]
    }

    pub fn frame(&self, frame: usize) -> &[u32] {
        &self.indices[frame * self.streams..(frame + 1) * self.streams]
    }

    pub fn stream(&self, stream: usize) -> impl Iterator<Item = u32> + '_ {
        self.indices
            .iter()
            .skip(stream)
            .step_by(self.streams)
            .copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame");
        for n in 1..=self.streams {
            out.push_str(&format!(",z{n}"));
        }
        out.push('\n');
        for i in 0..self.frames {
            out.push_str(&i.to_string());
            for z in self.frame(i) {
                out.push(',');
                out.push_str(&z.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let parse_err = |row: usize, column: &str, message: String| Error::Parse {
            row,
            column: column.to_string(),
            message,
        };
        let headers = rdr
            .headers()
            .map_err(|e| parse_err(0, "", e.to_string()))?
            .clone();
        let streams = headers.len().saturating_sub(1);
        let well_formed = headers.get(0).map(str::trim) == Some("frame")
            && headers
                .iter()
                .skip(1)
                .enumerate()
                .all(|(n, h)| h.trim() == format!("z{}", n + 1));
        if streams == 0 || !well_formed {
            return Err(parse_err(0, "", "expected header frame,z1,z2,...".into()));
        }
        let mut indices = Vec::new();
        let mut frames = 0;
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| parse_err(i + 1, "", e.to_string()))?;
            if record.len() != headers.len() {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: headers.len(),
                    found: record.len(),
                });
            }
            let frame: usize = record[0].trim().parse().map_err(|_| {
                parse_err(
                    i + 1,
                    "frame",
                    format!("{:?} is not a frame index", &record[0]),
                )
            })?;
            if frame != i {
                return Err(parse_err(
                    i + 1,
                    "frame",
                    format!("expected frame {i}, found {frame}"),
                ));
            }
            for (n, cell) in record.iter().skip(1).enumerate() {
                let z: u32 = cell.trim().parse().map_err(|_| {
                    parse_err(
                        i + 1,
                        &headers[n + 1],
                        format!("{cell:?} is not a token index"),
                    )
                })?;
                indices.push(z);
            }
            frames += 1;
        }
        Self::new(frames, streams, indices)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.indices.len());
        out.extend_from_slice(&TOKEN_MAGIC);
        out.write_u32::<LittleEndian>(TOKEN_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.frames as u32).unwrap();
        out.write_u32::<LittleEndian>(self.streams as u32).unwrap();
        for &z in &self.indices {
            out.write_u32::<LittleEndian>(z).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        check_magic(bytes, TOKEN_MAGIC)?;
        if bytes.len() < 16 {
            return Err(Error::Truncated {
                expected: 16,
                found: bytes.len(),
            });
        }
        let version = LittleEndian::read_u32(&bytes[4..8]);
        if version != TOKEN_VERSION {
            return Err(Error::VersionMismatch {
                expected: TOKEN_VERSION,
                found: version,
            });
        }
        let frames = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let streams = LittleEndian::read_u32(&bytes[12..16]) as usize;
        let expected = 16 + 4 * frames * streams;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let mut indices = vec![0u32; frames * streams];
        LittleEndian::read_u32_into(&bytes[16..], &mut indices);
        Self::new(frames, streams, indices)
    }
}

/// Loads tokens, picking the binary format when the file starts with `S3TK`.
pub fn load_tokens(path: impl AsRef<Path>) -> Result<TokenSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&TOKEN_MAGIC) {
        TokenSequence::from_bytes(&bytes)
    } else {
        TokenSequence::from_csv_reader(bytes.as_slice())
    }
}

/// Writes tokens as `S3TK` binary when `path` ends in `.s3tk`, CSV otherwise.
pub fn save_tokens(tokens: &TokenSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let binary = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("s3tk"));
    let bytes = if binary {
        tokens.to_bytes()
    } else {
        tokens.to_csv().into_bytes()
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationScheme {
    config: SchemeConfig,
    codebooks: Vec<Codebook>,
    input_dim: usize,
}

impl DiscretizationScheme {
    pub fn from_parts(
        config: SchemeConfig,
        codebooks: Vec<Codebook>,
        input_dim: usize,
    ) -> Result<Self> {
        config.validate_for_dim(input_dim)?;
        if codebooks.len() != config.n_streams() {
            return Err(Error::Shape(format!(
                "{} mode with this config needs {} codebooks, got {}",
                config.mode,
                config.n_streams(),
                codebooks.len()
            )));
        }
        let member_dim = input_dim / config.partitions;
        for (n, cb) in codebooks.iter().enumerate() {
            if cb.dim() != member_dim {
                return Err(Error::Shape(format!(
                    "codebook {n} has dim {}, expected {member_dim}",
                    cb.dim()
                )));
            }
            if cb.size() != config.stream_size(n) {
                return Err(Error::Shape(format!(
                    "codebook {n} has {} centroids, expected {}",
                    cb.size(),
                    config.stream_size(n)
                )));
            }
        }
        Ok(Self {
            config,
            codebooks,
            input_dim,
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_streams(&self) -> usize {
        self.codebooks.len()
    }

    /// Codebook size of each stream.
    pub fn stream_sizes(&self) -> Vec<usize> {
        self.codebooks.iter().map(Codebook::size).collect()
    }

    /// Width of the features each stream's codebook sees.
    fn member_dim(&self) -> usize {
        self.input_dim / self.config.partitions
    }

    /// Features seen by member `n`: a column block for pq, everything else
    /// sees the full vector.
    fn member_view<'a>(
        &self,
        features: &'a FeatureMatrix,
        n: usize,
    ) -> Result<std::borrow::Cow<'a, FeatureMatrix>> {
        Ok(match self.config.mode {
            Mode::Pq if self.config.partitions > 1 => {
                let w = self.member_dim();
                std::borrow::Cow::Owned(features.column_block(n * w, w)?)
            }
            _ => std::borrow::Cow::Borrowed(features),
        })
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: features.cols(),
            });
        }
        Ok(())
    }

    pub fn tokenize(&self, features: &FeatureMatrix) -> Result<TokenSequence> {
        self.check_dim(features)?;
        let per_stream = (0..self.n_streams())
            .map(|n| {
                let view = self.member_view(features, n)?;
                Ok(kmeans::assign(&self.codebooks[n], &view)?.indices)
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = features.rows();
        let streams = per_stream.len();
        let mut indices = vec![0u32; frames * streams];
        for (n, stream) in per_stream.iter().enumerate() {
            for (i, &z) in stream.iter().enumerate() {
                indices[i * streams + n] = z;
            }
        }
        TokenSequence::new(frames, streams, indices)
    }

    fn check_tokens(&self, tokens: &TokenSequence) -> Result<()> {
        if tokens.frames() == 0 {
            return Err(Error::Empty("token sequence"));
        }
        if tokens.streams() != self.n_streams() {
            return Err(Error::Shape(format!(
                "tokens have {} streams, scheme has {}",
                tokens.streams(),
                self.n_streams()
            )));
        }
        for frame in 0..tokens.frames() {
            for (stream, (&z, cb)) in tokens.frame(frame).iter().zip(&self.codebooks).enumerate() {
                if z as usize >= cb.size() {
                    return Err(Error::IndexOutOfRange {
                        stream,
                        frame,
                        index: z,
                        k: cb.size(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Codeword of every token, one matrix per stream.
    pub fn lookup(&self, tokens: &TokenSequence) -> Result<Vec<FeatureMatrix>> {
        self.check_tokens(tokens)?;
        self.codebooks
            .iter()
            .enumerate()
            .map(|(n, cb)| {
                let values = tokens
                    .stream(n)
                    .flat_map(|z| cb.centroid(z as usize).iter().copied())
                    .collect();
                FeatureMatrix::new(tokens.frames(), cb.dim(), values)
            })
            .collect()
    }

    /// Continuous surrogate of the tokens: concatenated subspace codewords for
    /// pq, the mean of the member codewords for an ensemble, and the codeword
    /// itself for a single codebook.
    pub fn reconstruct(&self, tokens: &TokenSequence) -> Result<FeatureMatrix> {
        let mut parts = self.lookup(tokens)?;
        if parts.len() == 1 {
            return Ok(parts.pop().unwrap());
        }
        match self.config.mode {
            Mode::Pq => FeatureMatrix::hconcat(&parts.iter().collect::<Vec<_>>()),
            _ => {
                let n = parts.len() as f64;
                let len = parts[0].as_slice().len();
                let values: Vec<f64> = (0..len)
                    .map(|i| parts.iter().map(|p| p.as_slice()[i] as f64).sum::<f64>() / n)
                    .collect();
                FeatureMatrix::from_f64(tokens.frames(), self.input_dim, &values)
            }
        }
    }

    /// Mean per-frame squared distance between `features` and their
    /// quantized reconstruction.
    pub fn quantization_error(&self, features: &FeatureMatrix) -> Result<f64> {
        let recon = self.reconstruct(&self.tokenize(features)?)?;
        let total: f64 = features
            .iter_rows()
            .zip(recon.iter_rows())
            .map(|(a, b)| squared_distance(a, b))
            .sum();
        Ok(total / features.rows() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&SCHEME_MAGIC);
        out.write_u32::<LittleEndian>(SCHEME_VERSION).unwrap();
        out.push(self.config.mode.code());
        out.write_u32::<LittleEndian>(self.input_dim as u32)
            .unwrap();
        out.write_u32::<LittleEndian>(self.n_streams() as u32)
            .unwrap();
        for cb in &self.codebooks {
            out.write_u32::<LittleEndian>(cb.size() as u32).unwrap();
            out.write_u32::<LittleEndian>(cb.dim() as u32).unwrap();
            for &v in cb.centroids().as_slice() {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        check_magic(bytes, SCHEME_MAGIC)?;
        let mut cursor = ByteCursor { bytes, pos: 4 };
        let version = cursor.u32()?;
        if version != SCHEME_VERSION {
            return Err(Error::VersionMismatch {
                expected: SCHEME_VERSION,
                found: version,
            });
        }
        let mode = Mode::from_code(cursor.u8()?)?;
        let input_dim = cursor.u32()? as usize;
        let n_streams = cursor.u32()? as usize;
        let mut codebooks = Vec::with_capacity(n_streams);
        for _ in 0..n_streams {
            let k = cursor.u32()? as usize;
            let dim = cursor.u32()? as usize;
            let raw = cursor.take(4 * k * dim)?;
            let mut values = vec![0.0f32; k * dim];
            LittleEndian::read_f32_into(raw, &mut values);
            codebooks.push(Codebook::new(FeatureMatrix::new(k, dim, values)?));
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Shape(format!(
                "{} trailing bytes in scheme file",
                bytes.len() - cursor.pos
            )));
        }
        let sizes: Vec<usize> = codebooks.iter().map(Codebook::size).collect();
        let config = match mode {
            Mode::Single => SchemeConfig::single(sizes.first().copied().unwrap_or(0)),
            Mode::Ensemble => SchemeConfig::ensemble(&sizes),
            Mode::Pq => {
                if sizes.windows(2).any(|w| w[0] != w[1]) {
                    return Err(Error::Shape(
                        "pq streams must share one cluster size".into(),
                    ));
                }
                SchemeConfig::pq(sizes.first().copied().unwrap_or(0), n_streams)
            }
        };
        Self::from_parts(config, codebooks, input_dim).map_err(|e| match e {
            // A structurally inconsistent file is a data problem, not a user config one.
            Error::InvalidConfig(msg) => Error::Shape(msg),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }
}

/// Trains a scheme with default Lloyd parameters.
pub fn train_scheme(
    data: &FeatureMatrix,
    config: &SchemeConfig,
    seed: u64,
) -> Result<DiscretizationScheme> {
    train_scheme_with(data, config, seed, TrainParams::default()).map(|(s, _)| s)
}

/// Trains every member codebook (in parallel; member `n` uses `seed + n`) and
/// returns the per-member training reports alongside the scheme.
pub fn train_scheme_with(
    data: &FeatureMatrix,
    config: &SchemeConfig,
    seed: u64,
    params: TrainParams,
) -> Result<(DiscretizationScheme, Vec<TrainReport>)> {
    config.validate_for_dim(data.cols())?;
    let max_k = *config.cluster_sizes.iter().max().unwrap();
    if max_k > data.rows() {
        return Err(Error::Shape(format!(
            "cannot train {max_k} clusters on {} frames",
            data.rows()
        )));
    }
    let width = data.cols() / config.partitions;
    let trained = (0..config.n_streams())
        .into_par_iter()
        .map(|n| {
            let view = match config.mode {
                Mode::Pq if config.partitions > 1 => {
                    std::borrow::Cow::Owned(data.column_block(n * width, width)?)
                }
                _ => std::borrow::Cow::Borrowed(data),
            };
            kmeans::train(
                &view,
                config.stream_size(n),
                seed.wrapping_add(n as u64),
                params,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (codebooks, reports) = trained.into_iter().unzip();
    Ok((
        DiscretizationScheme::from_parts(config.clone(), codebooks, data.cols())?,
        reports,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_pq() -> DiscretizationScheme {
        // Two 1-d subspaces with two centroids each.
        let a = Codebook::new(FeatureMatrix::from_rows(&[[0.0], [10.0]]).unwrap());
        let b = Codebook::new(FeatureMatrix::from_rows(&[[-5.0], [5.0]]).unwrap());
        DiscretizationScheme::from_parts(SchemeConfig::pq(2, 2), vec![a, b], 2).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SchemeConfig::single(4).validate().is_ok());
        assert!(SchemeConfig::ensemble(&[50, 100, 200]).validate().is_ok());
        assert!(SchemeConfig::ensemble(&[50, 50]).validate().is_err());
        assert!(SchemeConfig::ensemble(&[]).validate().is_err());
        assert!(SchemeConfig::pq(8, 0).validate().is_err());
        assert!(SchemeConfig::pq(0, 2).validate().is_err());
        let err = SchemeConfig::pq(8, 3).validate_for_dim(16).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(ref m) if m.contains("divisible")));
        let mut cfg = SchemeConfig::single(4);
        cfg.partitions = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pq_tokenize_toy() {
        let scheme = toy_pq();
        let x = FeatureMatrix::from_rows(&[[9.0, -4.0], [1.0, 6.0]]).unwrap();
        let tokens = scheme.tokenize(&x).unwrap();
        assert_eq!(tokens.frame(0), &[1, 0]);
        assert_eq!(tokens.frame(1), &[0, 1]);
        let recon = scheme.reconstruct(&tokens).unwrap();
        assert_eq!(recon.row(0), &[10.0, -5.0]);
        let lookups = scheme.lookup(&tokens).unwrap();
        assert_eq!(lookups.len(), 2);
        assert_eq!(lookups[1].cols(), 1);
    }

    #[test]
    fn exact_frame_has_zero_error() {
        let scheme = toy_pq();
        let x = FeatureMatrix::from_rows(&[[10.0, 5.0], [0.0, -5.0]]).unwrap();
        assert_eq!(scheme.quantization_error(&x).unwrap(), 0.0);
    }

    #[test]
    fn lookup_out_of_range_names_stream_and_frame() {
        let scheme = toy_pq();
        let tokens = TokenSequence::new(2, 2, vec![0, 1, 1, 2]).unwrap();
        match scheme.lookup(&tokens) {
            Err(Error::IndexOutOfRange { stream, frame, .. }) => {
                assert_eq!((stream, frame), (1, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        let wrong_streams = TokenSequence::new(1, 1, vec![0]).unwrap();
        assert!(scheme.lookup(&wrong_streams).is_err());
    }

    #[test]
    fn ensemble_reconstruct_is_mean() {
        let a = Codebook::new(FeatureMatrix::from_rows(&[[0.0, 0.0]]).unwrap());
        let b = Codebook::new(FeatureMatrix::from_rows(&[[2.0, 4.0], [9.0, 9.0]]).unwrap());
        let scheme =
            DiscretizationScheme::from_parts(SchemeConfig::ensemble(&[1, 2]), vec![a, b], 2)
                .unwrap();
        let tokens = TokenSequence::new(1, 2, vec![0, 0]).unwrap();
        assert_eq!(scheme.reconstruct(&tokens).unwrap().row(0), &[1.0, 2.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let scheme = toy_pq();
        let x = FeatureMatrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(
            scheme.tokenize(&x),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
        assert!(scheme.quantization_error(&x).is_err());
    }

    #[test]
    fn scheme_file_round_trip_and_layout() {
        let scheme = toy_pq();
        let bytes = scheme.to_bytes();
        assert_eq!(&bytes[..4], b"S3CB");
        assert_eq!(bytes[8], 2);
        // header 17 + 2 streams * (8 + 2 * 4)
        assert_eq!(bytes.len(), 17 + 2 * 16);
        assert_eq!(DiscretizationScheme::from_bytes(&bytes).unwrap(), scheme);

        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(DiscretizationScheme::from_bytes(&bad).is_err());
        assert!(matches!(
            DiscretizationScheme::from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn token_formats() {
        let tokens = TokenSequence::new(3, 2, vec![0, 5, 1, 4, 2, 3]).unwrap();
        let csv = tokens.to_csv();
        assert!(csv.starts_with("frame,z1,z2\n0,0,5\n"));
        assert_eq!(
            TokenSequence::from_csv_reader(csv.as_bytes()).unwrap(),
            tokens
        );
        assert_eq!(
            TokenSequence::from_bytes(&tokens.to_bytes()).unwrap(),
            tokens
        );
        assert!(TokenSequence::from_csv_reader("frame,z1\n0,x\n".as_bytes()).is_err());
        assert!(TokenSequence::from_csv_reader("f,z1\n0,1\n".as_bytes()).is_err());
        assert!(TokenSequence::from_csv_reader("frame,z1\n1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn train_rejects_too_few_rows() {
        let x = FeatureMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(
            train_scheme(&x, &SchemeConfig::single(3), 0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            train_scheme(&x, &SchemeConfig::pq(1, 3), 0),
            Err(Error::InvalidConfig(_))
        ));
    }
}
