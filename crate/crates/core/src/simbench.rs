//! Seeded recognition-synthesis experiment on synthetic factorized features.
//!
//! Each frame is `prototype[label] + speaker_strength * offset[speaker] +
//! noise`. The recognizer is either the identity (continuous features) or a
//! trained [`DiscretizationScheme`] followed by codeword lookup, and the
//! synthesizer is an affine ridge regression. Speaker and content probes are
//! nearest-centroid classifiers, so every number in a report is a
//! deterministic function of the configuration.
//!
//! Speakers `0..S-2` are training speakers, `S-2` is the held-out source and
//! `S-1` the held-out target. Every speaker's utterances are split in two: the
//! first half (reference) feeds training, target embeddings and conversion
//! inputs, the second half (enrollment) only builds the speaker-probe
//! centroids. Nothing the probe is scored against has been seen by the
//! system under test.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::discretize::{train_scheme, DiscretizationScheme, Mode, SchemeConfig, TokenSequence};
use crate::error::{Error, Result};
use crate::features::{parse_number, EmbeddingVector, FeatureMatrix};
use crate::kmeans::squared_distance;

/// Offset between the corpus seed and the seed of the recognizer's codebooks.
const SCHEME_SEED_OFFSET: u64 = 0x5eed_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcMode {
    /// Any-to-one: the synthesizer is trained on the target speaker only.
    A2o,
    /// Any-to-any: a multi-speaker synthesizer conditioned on an embedding.
    A2a,
}

impl fmt::Display for VcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VcMode::A2o => "a2o",
            VcMode::A2a => "a2a",
        })
    }
}

impl FromStr for VcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a2o" => Ok(VcMode::A2o),
            "a2a" => Ok(VcMode::A2a),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?} (expected a2o or a2a)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dim: usize,
    pub content_classes: usize,
    pub speakers: usize,
    pub utterances: usize,
    pub frames: usize,
    pub speaker_strength: f64,
    pub noise_sigma: f64,
    /// Norm of every content prototype.
    pub content_scale: f64,
    pub seed: u64,
    pub scheme: Option<SchemeConfig>,
    pub mode: VcMode,
    pub ridge: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            content_classes: 20,
            speakers: 10,
            utterances: 20,
            frames: 50,
            speaker_strength: 1.0,
            noise_sigma: 0.2,
            content_scale: 4.0,
            seed: 0,
            scheme: Some(SchemeConfig::single(64)),
            mode: VcMode::A2a,
            ridge: 1e-3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.content_classes < 2 {
            return bad("content_classes must be at least 2");
        }
        if self.speakers < 3 {
            return bad("speakers must be at least 3 (training, source and target)");
        }
        if self.utterances < 2 {
            return bad("utterances must be at least 2 (reference and enrollment halves)");
        }
        if self.frames == 0 {
            return bad("frames must be at least 1");
        }
        for (name, v) in [
            ("speaker_strength", self.speaker_strength),
            ("noise_sigma", self.noise_sigma),
            ("ridge", self.ridge),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if !(self.content_scale.is_finite() && self.content_scale > 0.0) {
            return bad("content_scale must be finite and > 0");
        }
        if let Some(s) = &self.scheme {
            s.validate_for_dim(self.dim)?;
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Reference utterances per speaker; the rest are enrollment.
    pub fn reference_count(&self) -> usize {
        self.utterances.div_ceil(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: usize,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    /// Enrollment utterances are reserved for the speaker probe.
    pub enrollment: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub content_prototypes: FeatureMatrix,
    /// Unit-norm offsets, before scaling by the speaker strength.
    pub speaker_offsets: FeatureMatrix,
    pub speaker_strength: f64,
    /// Speaker-major, then utterance index.
    pub utterances: Vec<Utterance>,
    pub splits: Splits,
}

impl SynthCorpus {
    pub fn speakers(&self) -> usize {
        self.speaker_offsets.rows()
    }

    pub fn reference(&self, speaker: usize) -> impl Iterator<Item = &Utterance> + '_ {
        self.utterances
            .iter()
            .filter(move |u| u.speaker == speaker && !u.enrollment)
    }

    pub fn enrollment(&self, speaker: usize) -> impl Iterator<Item = &Utterance> + '_ {
        self.utterances
            .iter()
            .filter(move |u| u.speaker == speaker && u.enrollment)
    }

    /// Mean of the content prototypes.
    pub fn content_mean(&self) -> Vec<f64> {
        self.content_prototypes.mean_row()
    }
}

fn normal_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, norm: f64) -> Result<FeatureMatrix> {
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let mut row: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v *= norm / len);
        values.extend(row);
    }
    FeatureMatrix::from_f64(rows, cols, &values)
}

pub fn generate_corpus(cfg: &SimConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = normal_rows(&mut rng, cfg.content_classes, cfg.dim, cfg.content_scale)?;
    let offsets = normal_rows(&mut rng, cfg.speakers, cfg.dim, 1.0)?;
    let reference = cfg.reference_count();

    let mut utterances = Vec::with_capacity(cfg.speakers * cfg.utterances);
    for speaker in 0..cfg.speakers {
        let offset = offsets.row(speaker);
        for u in 0..cfg.utterances {
            let labels: Vec<usize> = (0..cfg.frames)
                .map(|_| rng.random_range(0..cfg.content_classes))
                .collect();
            let mut values = Vec::with_capacity(cfg.frames * cfg.dim);
            for &label in &labels {
                for (&p, &o) in prototypes.row(label).iter().zip(offset) {
                    let noise: f64 = rng.sample(StandardNormal);
                    values
                        .push(p as f64 + cfg.speaker_strength * o as f64 + cfg.noise_sigma * noise);
                }
            }
            utterances.push(Utterance {
                speaker,
                features: FeatureMatrix::from_f64(cfg.frames, cfg.dim, &values)?,
                labels,
                enrollment: u >= reference,
            });
        }
    }
    Ok(SynthCorpus {
        content_prototypes: prototypes,
        speaker_offsets: offsets,
        speaker_strength: cfg.speaker_strength,
        utterances,
        splits: Splits {
            train: (0..cfg.speakers - 2).collect(),
            source: cfg.speakers - 2,
            target: cfg.speakers - 1,
        },
    })
}

/// Speaker-level embedding: the average of per-utterance frame means.
pub fn speaker_embedding<'a, I>(utterances: I) -> Result<EmbeddingVector>
where
    I: IntoIterator<Item = &'a FeatureMatrix>,
{
    let per_utt = utterances
        .into_iter()
        .map(|u| EmbeddingVector::new(u.mean_row()))
        .collect::<Result<Vec<_>>>()?;
    if per_utt.is_empty() {
        return Err(Error::Empty(
            "speaker embedding needs at least one utterance",
        ));
    }
    EmbeddingVector::mean(&per_utt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Continuous,
    TokenLookup,
}

/// How a synthesizer consumes its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub input_kind: InputKind,
    /// Append the speaker embedding to every input frame.
    pub conditioned: bool,
    /// Add the speaker embedding to every output frame, so the regression
    /// models deviations from the speaker's average frame.
    pub embedding_skip: bool,
}

impl SynthSpec {
    pub fn plain(input_kind: InputKind) -> Self {
        Self {
            input_kind,
            conditioned: false,
            embedding_skip: false,
        }
    }

    pub fn conditioned(input_kind: InputKind) -> Self {
        Self {
            input_kind,
            conditioned: true,
            embedding_skip: true,
        }
    }
}

/// One training pair: recognizer output, optional speaker embedding and the
/// features to reproduce.
#[derive(Debug, Clone)]
pub struct SynthExample<'a> {
    pub input: FeatureMatrix,
    pub embedding: Option<&'a EmbeddingVector>,
    pub target: &'a FeatureMatrix,
}

/// Affine frame-wise synthesizer with weights `(input_dim + 1) x output_dim`;
/// the last weight row is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSynth {
    weights: DMatrix<f64>,
    spec: SynthSpec,
    feature_dim: usize,
}

/// Recognizer output handed to [`convert`].
#[derive(Debug, Clone, Copy)]
pub enum SynthInput<'a> {
    Continuous(&'a FeatureMatrix),
    Tokens {
        scheme: &'a DiscretizationScheme,
        tokens: &'a TokenSequence,
    },
}

impl SynthInput<'_> {
    fn kind(&self) -> InputKind {
        match self {
            SynthInput::Continuous(_) => InputKind::Continuous,
            SynthInput::Tokens { .. } => InputKind::TokenLookup,
        }
    }

    /// Continuous features, or the per-stream codewords side by side.
    pub fn features(&self) -> Result<FeatureMatrix> {
        match self {
            SynthInput::Continuous(m) => Ok((*m).clone()),
            SynthInput::Tokens { scheme, tokens } => {
                let parts = scheme.lookup(tokens)?;
                FeatureMatrix::hconcat(&parts.iter().collect::<Vec<_>>())
            }
        }
    }
}

fn design_row(out: &mut Vec<f64>, frame: &[f32], embedding: Option<&EmbeddingVector>) {
    out.extend(frame.iter().map(|&v| v as f64));
    if let Some(e) = embedding {
        out.extend_from_slice(e.as_slice());
    }
    out.push(1.0);
}

/// Least squares `min |B - A W|^2` via Householder QR, failing on a
/// numerically rank-deficient `A`.
fn solve_least_squares(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::Singular(format!(
            "{rows} equations for {cols} unknowns; add ridge regularization"
        )));
    }
    let qr = a.qr();
    let r = qr.r();
    let max_diag = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_diag = r
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if max_diag == 0.0 || min_diag <= max_diag * 1e-10 * cols as f64 {
        return Err(Error::Singular(
            "design matrix is rank deficient; add ridge regularization".into(),
        ));
    }
    let mut qtb = b;
    qr.q_tr_mul(&mut qtb);
    let qtb = qtb.rows(0, cols).into_owned();
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))
}

impl LinearSynth {
    /// Ridge regression `min |T - [X, 1] W|^2 + ridge |W|^2` over all examples.
    pub fn fit(spec: SynthSpec, examples: &[SynthExample<'_>], ridge: f64) -> Result<Self> {
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ridge must be >= 0, got {ridge}"
            )));
        }
        let first = examples
            .first()
            .ok_or(Error::Empty("synthesizer training set"))?;
        let feature_dim = first.input.cols();
        let emb_dim = first.embedding.map_or(0, EmbeddingVector::dim);
        let out_dim = first.target.cols();
        if spec.conditioned != first.embedding.is_some() {
            return Err(Error::InvalidConfig(
                "conditioned synthesizers need an embedding per example, others none".into(),
            ));
        }
        if spec.embedding_skip && (!spec.conditioned || emb_dim != out_dim) {
            return Err(Error::InvalidConfig(
                "embedding skip needs a conditioned synthesizer with embedding dim = output dim"
                    .into(),
            ));
        }
        let p = feature_dim + emb_dim + 1;

        let mut design = Vec::new();
        let mut targets = Vec::new();
        let mut n = 0;
        for ex in examples {
            if ex.input.rows() != ex.target.rows() {
                return Err(Error::LengthMismatch {
                    left: ex.input.rows(),
                    right: ex.target.rows(),
                });
            }
            if ex.input.cols() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: ex.input.cols(),
                });
            }
            if ex.target.cols() != out_dim {
                return Err(Error::DimensionMismatch {
                    expected: out_dim,
                    found: ex.target.cols(),
                });
            }
            match ex.embedding {
                Some(e) if e.dim() != emb_dim => {
                    return Err(Error::DimensionMismatch {
                        expected: emb_dim,
                        found: e.dim(),
                    })
                }
                e if e.is_some() != spec.conditioned => {
                    return Err(Error::InvalidConfig(
                        "mixed conditioning in training set".into(),
                    ))
                }
                _ => {}
            }
            for (x, t) in ex.input.iter_rows().zip(ex.target.iter_rows()) {
                design_row(&mut design, x, ex.embedding);
                let skip = ex.embedding.filter(|_| spec.embedding_skip);
                targets.extend(
                    t.iter()
                        .enumerate()
                        .map(|(j, &v)| v as f64 - skip.map_or(0.0, |e| e.as_slice()[j])),
                );
                n += 1;
            }
        }

        let aug = if ridge > 0.0 { p } else { 0 };
        let mut a = DMatrix::<f64>::zeros(n + aug, p);
        let mut b = DMatrix::<f64>::zeros(n + aug, out_dim);
        for i in 0..n {
            for j in 0..p {
                a[(i, j)] = design[i * p + j];
            }
            for j in 0..out_dim {
                b[(i, j)] = targets[i * out_dim + j];
            }
        }
        let lambda_sqrt = ridge.sqrt();
        for j in 0..aug {
            a[(n + j, j)] = lambda_sqrt;
        }
        let weights = solve_least_squares(a, b)?;
        Ok(Self {
            weights,
            spec,
            feature_dim,
        })
    }

    pub fn spec(&self) -> SynthSpec {
        self.spec
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn apply(
        &self,
        features: &FeatureMatrix,
        embedding: Option<&EmbeddingVector>,
    ) -> Result<FeatureMatrix> {
        if features.cols() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: features.cols(),
            });
        }
        if let Some(e) = embedding {
            let expected = self.weights.nrows() - self.feature_dim - 1;
            if e.dim() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: e.dim(),
                });
            }
        }
        let out_dim = self.output_dim();
        let mut values = Vec::with_capacity(features.rows() * out_dim);
        let mut row = Vec::with_capacity(self.weights.nrows());
        for frame in features.iter_rows() {
            row.clear();
            design_row(&mut row, frame, embedding);
            for j in 0..out_dim {
                let mut v: f64 = row
                    .iter()
                    .zip(self.weights.column(j).iter())
                    .map(|(x, w)| x * w)
                    .sum();
                if self.spec.embedding_skip {
                    v += embedding.map_or(0.0, |e| e.as_slice()[j]);
                }
                values.push(v);
            }
        }
        FeatureMatrix::from_f64(features.rows(), out_dim, &values)
    }
}

/// Unconditioned affine least-squares map from continuous `inputs` to
/// `targets`.
pub fn fit_synthesizer(
    inputs: &FeatureMatrix,
    targets: &FeatureMatrix,
    ridge: f64,
) -> Result<LinearSynth> {
    LinearSynth::fit(
        SynthSpec::plain(InputKind::Continuous),
        &[SynthExample {
            input: inputs.clone(),
            embedding: None,
            target: targets,
        }],
        ridge,
    )
}

/// Runs the synthesizer on recognizer output, optionally conditioned on a
/// target speaker embedding.
pub fn convert(
    input: SynthInput<'_>,
    synth: &LinearSynth,
    target_embedding: Option<&EmbeddingVector>,
) -> Result<FeatureMatrix> {
    if input.kind() != synth.spec.input_kind {
        return Err(Error::InvalidConfig(format!(
            "synthesizer expects {:?} input, got {:?}",
            synth.spec.input_kind,
            input.kind()
        )));
    }
    if target_embedding.is_some() != synth.spec.conditioned {
        return Err(Error::InvalidConfig(if synth.spec.conditioned {
            "conditioned synthesizer needs a target embedding".into()
        } else {
            "unconditioned synthesizer takes no target embedding".into()
        }));
    }
    synth.apply(&input.features()?, target_embedding)
}

/// Nearest-centroid speaker classifier over enrollment utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProbe {
    centroids: Vec<EmbeddingVector>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerProbeResult {
    /// Fraction of utterances whose nearest centroid is the claimed speaker.
    pub accuracy: f64,
    /// Whether the pooled embedding of all utterances lands on the claim.
    pub accepted: bool,
}

impl SpeakerProbe {
    pub fn from_corpus(corpus: &SynthCorpus) -> Result<Self> {
        let centroids = (0..corpus.speakers())
            .map(|s| speaker_embedding(corpus.enrollment(s).map(|u| &u.features)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { centroids })
    }

    pub fn centroids(&self) -> &[EmbeddingVector] {
        &self.centroids
    }

    pub fn classify_embedding(&self, embedding: &EmbeddingVector) -> Result<usize> {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids.iter().enumerate() {
            if c.dim() != embedding.dim() {
                return Err(Error::DimensionMismatch {
                    expected: c.dim(),
                    found: embedding.dim(),
                });
            }
            let d: f64 = c
                .as_slice()
                .iter()
                .zip(embedding.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best.0)
    }

    pub fn classify(&self, utterance: &FeatureMatrix) -> Result<usize> {
        self.classify_embedding(&EmbeddingVector::new(utterance.mean_row())?)
    }

    pub fn probe(
        &self,
        utterances: &[&FeatureMatrix],
        claimed: usize,
    ) -> Result<SpeakerProbeResult> {
        if claimed >= self.centroids.len() {
            return Err(Error::UnknownSpeaker(claimed));
        }
        if utterances.is_empty() {
            return Err(Error::Empty("speaker probe needs at least one utterance"));
        }
        let mut hits = 0;
        for u in utterances {
            if self.classify(u)? == claimed {
                hits += 1;
            }
        }
        let pooled = speaker_embedding(utterances.iter().copied())?;
        Ok(SpeakerProbeResult {
            accuracy: hits as f64 / utterances.len() as f64,
            accepted: self.classify_embedding(&pooled)? == claimed,
        })
    }
}

pub fn probe_speaker(
    converted: &[&FeatureMatrix],
    corpus: &SynthCorpus,
    claimed: usize,
) -> Result<SpeakerProbeResult> {
    if claimed >= corpus.speakers() {
        return Err(Error::UnknownSpeaker(claimed));
    }
    SpeakerProbe::from_corpus(corpus)?.probe(converted, claimed)
}

/// Frame-level content accuracy after removing the utterance's own mean
/// (its speaker component) and restoring the global content mean.
pub fn probe_content(
    converted: &FeatureMatrix,
    corpus: &SynthCorpus,
    labels: &[usize],
) -> Result<f64> {
    if labels.len() != converted.rows() {
        return Err(Error::LengthMismatch {
            left: converted.rows(),
            right: labels.len(),
        });
    }
    let protos = &corpus.content_prototypes;
    if converted.cols() != protos.cols() {
        return Err(Error::DimensionMismatch {
            expected: protos.cols(),
            found: converted.cols(),
        });
    }
    let utt_mean = converted.mean_row();
    let content_mean = corpus.content_mean();
    let mut hits = 0;
    let mut centred = vec![0.0f32; converted.cols()];
    for (frame, &label) in converted.iter_rows().zip(labels) {
        for (c, ((&v, m), g)) in centred
            .iter_mut()
            .zip(frame.iter().zip(&utt_mean).zip(&content_mean))
        {
            *c = (v as f64 - m + g) as f32;
        }
        let mut best = (0, f64::INFINITY);
        for (k, p) in protos.iter_rows().enumerate() {
            let d = squared_distance(p, &centred);
            if d < best.1 {
                best = (k, d);
            }
        }
        if best.0 == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    /// Unconverted reference utterances; a sanity ceiling for both probes.
    Genuine,
    Continuous,
    Discrete(SchemeConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub mode: VcMode,
    pub condition: Condition,
    /// Fraction of converted source utterances the probe attributes to the
    /// target (for [`Condition::Genuine`]: utterances attributed to their own
    /// speaker).
    pub speaker_accept: f64,
    pub content_acc: f64,
    /// Mean per-frame squared error when resynthesizing the target's own
    /// reference utterances.
    pub recon_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seed: u64,
    pub rows: Vec<ConditionResult>,
}

impl ExperimentReport {
    pub fn find(&self, condition: &Condition) -> Option<&ConditionResult> {
        self.rows.iter().find(|r| &r.condition == condition)
    }
}

pub const REPORT_HEADER: &str = "seed,mode,scheme,K,streams,speaker_accept,content_acc,recon_mse";

/// One CSV line per condition, in report order, fixed precision.
pub fn reports_to_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for rep in reports {
        for r in &rep.rows {
            let (scheme, k, streams) = match &r.condition {
                Condition::Genuine => ("genuine".to_string(), String::new(), String::new()),
                Condition::Continuous => ("continuous".to_string(), String::new(), String::new()),
                Condition::Discrete(s) => (
                    s.mode.to_string(),
                    s.cluster_sizes
                        .iter()
                        .map(usize::to_string)
                        .collect::<Vec<_>>()
                        .join("+"),
                    s.n_streams().to_string(),
                ),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{:.8}\n",
                rep.seed, r.mode, scheme, k, streams, r.speaker_accept, r.content_acc, r.recon_mse
            ));
        }
    }
    out
}

/// A generated corpus plus its probe, ready to evaluate recognizers on.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: SimConfig,
    corpus: SynthCorpus,
    probe: SpeakerProbe,
}

enum Recognizer {
    Continuous,
    Discrete(DiscretizationScheme),
}

impl Recognizer {
    fn kind(&self) -> InputKind {
        match self {
            Recognizer::Continuous => InputKind::Continuous,
            Recognizer::Discrete(_) => InputKind::TokenLookup,
        }
    }

    fn tokens(&self, x: &FeatureMatrix) -> Result<Option<TokenSequence>> {
        match self {
            Recognizer::Continuous => Ok(None),
            Recognizer::Discrete(s) => s.tokenize(x).map(Some),
        }
    }

    fn features(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.input(x, self.tokens(x)?.as_ref()).features()
    }

    fn input<'a>(
        &'a self,
        x: &'a FeatureMatrix,
        tokens: Option<&'a TokenSequence>,
    ) -> SynthInput<'a> {
        match (self, tokens) {
            (Recognizer::Discrete(scheme), Some(tokens)) => SynthInput::Tokens { scheme, tokens },
            _ => SynthInput::Continuous(x),
        }
    }
}

fn mean_frame_error(a: &FeatureMatrix, b: &FeatureMatrix) -> f64 {
    let total: f64 = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| squared_distance(x, y))
        .sum();
    total / a.rows() as f64
}

impl Experiment {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        let corpus = generate_corpus(cfg)?;
        let probe = SpeakerProbe::from_corpus(&corpus)?;
        Ok(Self {
            cfg: cfg.clone(),
            corpus,
            probe,
        })
    }

    pub fn corpus(&self) -> &SynthCorpus {
        &self.corpus
    }

    pub fn probe(&self) -> &SpeakerProbe {
        &self.probe
    }

    /// Probes applied to unconverted reference utterances of every speaker.
    pub fn genuine(&self) -> Result<ConditionResult> {
        let mut hits = 0;
        let mut total = 0;
        for u in self.corpus.utterances.iter().filter(|u| !u.enrollment) {
            hits += usize::from(self.probe.classify(&u.features)? == u.speaker);
            total += 1;
        }
        let content = self.content_accuracy(
            self.corpus
                .reference(self.corpus.splits.source)
                .map(|u| (&u.features, u.labels.as_slice())),
        )?;
        Ok(ConditionResult {
            mode: self.cfg.mode,
            condition: Condition::Genuine,
            speaker_accept: hits as f64 / total as f64,
            content_acc: content,
            recon_mse: 0.0,
        })
    }

    fn content_accuracy<'a>(
        &self,
        items: impl Iterator<Item = (&'a FeatureMatrix, &'a [usize])>,
    ) -> Result<f64> {
        let (mut hit_frames, mut frames) = (0.0, 0usize);
        for (x, labels) in items {
            hit_frames += probe_content(x, &self.corpus, labels)? * labels.len() as f64;
            frames += labels.len();
        }
        Ok(hit_frames / frames as f64)
    }

    fn train_recognizer(&self, scheme: Option<&SchemeConfig>) -> Result<Recognizer> {
        let Some(cfg) = scheme else {
            return Ok(Recognizer::Continuous);
        };
        let train: Vec<&FeatureMatrix> = self
            .corpus
            .splits
            .train
            .iter()
            .flat_map(|&s| self.corpus.reference(s).map(|u| &u.features))
            .collect();
        let data = FeatureMatrix::vstack(&train)?;
        let seed = self.cfg.seed.wrapping_add(SCHEME_SEED_OFFSET);
        Ok(Recognizer::Discrete(train_scheme(&data, cfg, seed)?))
    }

    /// Trains the recognizer and synthesizer for one condition, converts the
    /// held-out source to the held-out target, and scores the result.
    pub fn evaluate(&self, scheme: Option<&SchemeConfig>) -> Result<ConditionResult> {
        let recognizer = self.train_recognizer(scheme)?;
        let corpus = &self.corpus;
        let (source, target) = (corpus.splits.source, corpus.splits.target);
        let target_refs: Vec<&Utterance> = corpus.reference(target).collect();
        let target_emb = speaker_embedding(target_refs.iter().map(|u| &u.features))?;

        let synth = match self.cfg.mode {
            VcMode::A2o => {
                let examples = target_refs
                    .iter()
                    .map(|u| {
                        Ok(SynthExample {
                            input: recognizer.features(&u.features)?,
                            embedding: None,
                            target: &u.features,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                LinearSynth::fit(
                    SynthSpec::plain(recognizer.kind()),
                    &examples,
                    self.cfg.ridge,
                )?
            }
            VcMode::A2a => {
                let embeddings = corpus
                    .splits
                    .train
                    .iter()
                    .map(|&s| speaker_embedding(corpus.reference(s).map(|u| &u.features)))
                    .collect::<Result<Vec<_>>>()?;
                let mut examples = Vec::new();
                for (&s, emb) in corpus.splits.train.iter().zip(&embeddings) {
                    for u in corpus.reference(s) {
                        examples.push(SynthExample {
                            input: recognizer.features(&u.features)?,
                            embedding: Some(emb),
                            target: &u.features,
                        });
                    }
                }
                LinearSynth::fit(
                    SynthSpec::conditioned(recognizer.kind()),
                    &examples,
                    self.cfg.ridge,
                )?
            }
        };
        let conditioning = (self.cfg.mode == VcMode::A2a).then_some(&target_emb);
        let run = |x: &FeatureMatrix| -> Result<FeatureMatrix> {
            let tokens = recognizer.tokens(x)?;
            convert(recognizer.input(x, tokens.as_ref()), &synth, conditioning)
        };

        let source_refs: Vec<&Utterance> = corpus.reference(source).collect();
        let converted = source_refs
            .iter()
            .map(|u| run(&u.features))
            .collect::<Result<Vec<_>>>()?;
        let probe = self
            .probe
            .probe(&converted.iter().collect::<Vec<_>>(), target)?;
        let content_acc = self.content_accuracy(
            converted
                .iter()
                .zip(&source_refs)
                .map(|(c, u)| (c, u.labels.as_slice())),
        )?;

        let mut recon_total = 0.0;
        for u in &target_refs {
            recon_total += mean_frame_error(&run(&u.features)?, &u.features);
        }

        Ok(ConditionResult {
            mode: self.cfg.mode,
            condition: scheme.map_or(Condition::Continuous, |s| Condition::Discrete(s.clone())),
            speaker_accept: probe.accuracy,
            content_acc,
            recon_mse: recon_total / target_refs.len() as f64,
        })
    }

    /// Genuine, continuous, then one discrete row per scheme.
    pub fn run_conditions(&self, schemes: &[SchemeConfig]) -> Result<ExperimentReport> {
        let mut rows = vec![self.genuine()?, self.evaluate(None)?];
        for s in schemes {
            rows.push(self.evaluate(Some(s))?);
        }
        Ok(ExperimentReport {
            seed: self.cfg.seed,
            rows,
        })
    }
}

/// Genuine and continuous rows, plus a discrete row when `cfg.scheme` is set.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentReport> {
    let exp = Experiment::new(cfg)?;
    exp.run_conditions(cfg.scheme.as_slice())
}

/// A configuration file: the base [`SimConfig`] plus a number of
/// consecutive seeds and, for pq, an optional list of partition counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPlan {
    pub base: SimConfig,
    pub runs: usize,
    pub schemes: Vec<SchemeConfig>,
}

impl SimPlan {
    /// Parses `key=value` lines; blank lines and lines starting with `#` are
    /// skipped. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut runs = 1;
        let mut scheme_mode: Option<Option<Mode>> = None;
        let mut clusters: Option<Vec<usize>> = None;
        let mut partitions: Option<Vec<usize>> = None;
        let mut seen: Vec<String> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::InvalidConfig(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(bad(format!("duplicate key {key:?}")));
            }
            seen.push(key.to_string());

            let uint = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| bad(format!("{key}: {v:?} is not a non-negative integer")))
            };
            let float = |v: &str| -> Result<f64> {
                parse_number(v).map_err(|m| bad(format!("{key}: {m}")))
            };
            let list =
                |v: &str| -> Result<Vec<usize>> { v.split(',').map(|p| uint(p.trim())).collect() };

            match key {
                "dim" => cfg.dim = uint(value)?,
                "content_classes" => cfg.content_classes = uint(value)?,
                "speakers" => cfg.speakers = uint(value)?,
                "utterances" => cfg.utterances = uint(value)?,
                "frames" => cfg.frames = uint(value)?,
                "speaker_strength" => cfg.speaker_strength = float(value)?,
                "noise_sigma" => cfg.noise_sigma = float(value)?,
                "content_scale" => cfg.content_scale = float(value)?,
                "ridge" => cfg.ridge = float(value)?,
                "seed" => {
                    cfg.seed = value.parse().map_err(|_| {
                        bad(format!("seed: {value:?} is not a 64-bit unsigned integer"))
                    })?
                }
                "mode" => cfg.mode = value.parse().map_err(|e: Error| bad(e.to_string()))?,
                "runs" => runs = uint(value)?,
                "scheme" => {
                    scheme_mode = Some(match value {
                        "none" => None,
                        other => Some(other.parse().map_err(|e: Error| bad(e.to_string()))?),
                    })
                }
                "clusters" => clusters = Some(list(value)?),
                "partitions" => partitions = Some(list(value)?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        if runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }

        let mode = scheme_mode.unwrap_or(Some(Mode::Single));
        let sizes = clusters.unwrap_or_else(|| vec![64]);
        let schemes = match mode {
            None => {
                if partitions.is_some() {
                    return Err(Error::InvalidConfig(
                        "partitions given with scheme=none".into(),
                    ));
                }
                Vec::new()
            }
            Some(Mode::Pq) => {
                if sizes.len() != 1 {
                    return Err(Error::InvalidConfig(
                        "pq takes a single cluster size".into(),
                    ));
                }
                partitions
                    .unwrap_or_else(|| vec![1])
                    .into_iter()
                    .map(|p| SchemeConfig::pq(sizes[0], p))
                    .collect()
            }
            Some(m) => {
                if partitions.is_some_and(|p| p != [1]) {
                    return Err(Error::InvalidConfig(format!(
                        "partitions apply to pq only, not {m}"
                    )));
                }
                let cfg = match m {
                    Mode::Single if sizes.len() == 1 => SchemeConfig::single(sizes[0]),
                    Mode::Single => {
                        return Err(Error::InvalidConfig("single takes one cluster size".into()))
                    }
                    _ => SchemeConfig::ensemble(&sizes),
                };
                vec![cfg]
            }
        };
        cfg.scheme = schemes.first().cloned();
        cfg.validate()?;
        for s in &schemes {
            s.validate_for_dim(cfg.dim)?;
        }
        Ok(Self {
            base: cfg,
            runs,
            schemes,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(|i| self.base.seed.wrapping_add(i))
    }

    /// One report per seed, computed in parallel and returned in seed order.
    pub fn run(&self) -> Result<Vec<ExperimentReport>> {
        let seeds: Vec<u64> = self.seeds().collect();
        seeds
            .par_iter()
            .map(|&seed| Experiment::new(&self.base.with_seed(seed))?.run_conditions(&self.schemes))
            .collect()
    }
}
