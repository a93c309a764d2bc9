//! The two-user interference channel with a cognitive relay: antenna
//! configuration, feedback regimes, i.i.d. Rayleigh fading and the linear
//! output law.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{ComplexMatrix, ComplexVector, RandomSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("antenna counts must be at least 1 (got m_t={m_t}, m_c={m_c}, m_r={m_r})")]
    ZeroAntennas { m_t: usize, m_c: usize, m_r: usize },
    #[error("a channel sequence needs at least one slot")]
    NoSlots,
    #[error("slot {slot} is outside a sequence of {len} slots")]
    SlotOutOfRange { slot: usize, len: usize },
    #[error("{node} input has length {got}, expected {expected}")]
    InputShape {
        node: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("no-feedback mode cannot give the relay feedback")]
    RelayFeedbackWithoutFeedback,
    #[error("malformed channel document: {0}")]
    Malformed(String),
}

/// Antenna counts: `m_t` per transmitter, `m_c` at the relay, `m_r` per
/// receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AntennaConfig {
    pub m_t: usize,
    pub m_c: usize,
    pub m_r: usize,
}

impl AntennaConfig {
    pub fn new(m_t: usize, m_c: usize, m_r: usize) -> Result<Self, ModelError> {
        if m_t == 0 || m_c == 0 || m_r == 0 {
            return Err(ModelError::ZeroAntennas { m_t, m_c, m_r });
        }
        Ok(Self { m_t, m_c, m_r })
    }

    pub fn siso() -> Self {
        Self { m_t: 1, m_c: 1, m_r: 1 }
    }

    /// Antennas jointly serving one user: its transmitter plus the relay.
    pub fn joint(&self) -> usize {
        self.m_t + self.m_c
    }

    pub fn is_valid(&self) -> bool {
        self.m_t >= 1 && self.m_c >= 1 && self.m_r >= 1
    }
}

impl fmt::Display for AntennaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.m_t, self.m_c, self.m_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeedbackKind {
    DelayedCsit,
    DelayedOutput,
    DelayedShannon,
    NoFeedback,
}

impl FeedbackKind {
    pub fn has_csi(self) -> bool {
        matches!(self, FeedbackKind::DelayedCsit | FeedbackKind::DelayedShannon)
    }

    pub fn has_output(self) -> bool {
        matches!(self, FeedbackKind::DelayedOutput | FeedbackKind::DelayedShannon)
    }

    pub fn label(self) -> &'static str {
        match self {
            FeedbackKind::DelayedCsit => "csit",
            FeedbackKind::DelayedOutput => "output",
            FeedbackKind::DelayedShannon => "shannon",
            FeedbackKind::NoFeedback => "none",
        }
    }
}

/// Feedback regime. Feedback always arrives exactly one slot late.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeedbackMode {
    pub kind: FeedbackKind,
    pub relay_has_feedback: bool,
}

impl FeedbackMode {
    pub fn new(kind: FeedbackKind, relay_has_feedback: bool) -> Result<Self, ModelError> {
        if kind == FeedbackKind::NoFeedback && relay_has_feedback {
            return Err(ModelError::RelayFeedbackWithoutFeedback);
        }
        Ok(Self {
            kind,
            relay_has_feedback,
        })
    }

    /// Feedback at every transmitting node (relay included).
    pub fn everywhere(kind: FeedbackKind) -> Self {
        Self {
            kind,
            relay_has_feedback: kind != FeedbackKind::NoFeedback,
        }
    }

    pub fn label(&self) -> String {
        if self.kind != FeedbackKind::NoFeedback && !self.relay_has_feedback {
            format!("{}-no-relay-feedback", self.kind.label())
        } else {
            self.kind.label().to_string()
        }
    }
}

/// The five antenna regimes partitioning configuration space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    I,
    II,
    III,
    IV,
    V,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::I => "I",
            Condition::II => "II",
            Condition::III => "III",
            Condition::IV => "IV",
            Condition::V => "V",
        };
        f.write_str(s)
    }
}

pub fn classify_condition(config: AntennaConfig) -> Condition {
    let AntennaConfig { m_t, m_c, m_r } = config;
    // Halves are compared after doubling to stay in integers.
    if m_t + m_c <= m_r {
        Condition::I
    } else if m_t + m_c <= 2 * m_r {
        if m_r > m_t {
            Condition::II
        } else {
            Condition::III
        }
    } else if m_r > m_t {
        Condition::IV
    } else {
        Condition::V
    }
}

/// The six links of one slot, named receiver-first: `ab` carries
/// transmitter B's signal to receiver A.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSlot {
    pub aa: ComplexMatrix,
    pub ab: ComplexMatrix,
    pub ac: ComplexMatrix,
    pub ba: ComplexMatrix,
    pub bb: ComplexMatrix,
    pub bc: ComplexMatrix,
}

impl ChannelSlot {
    fn sample(config: AntennaConfig, rng: &mut RandomSource) -> Self {
        let AntennaConfig { m_t, m_c, m_r } = config;
        Self {
            aa: rng.complex_matrix(m_r, m_t),
            ab: rng.complex_matrix(m_r, m_t),
            ac: rng.complex_matrix(m_r, m_c),
            ba: rng.complex_matrix(m_r, m_t),
            bb: rng.complex_matrix(m_r, m_t),
            bc: rng.complex_matrix(m_r, m_c),
        }
    }

    fn matrices(&self) -> [&ComplexMatrix; 6] {
        [&self.aa, &self.ab, &self.ac, &self.ba, &self.bb, &self.bc]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSequence {
    pub config: AntennaConfig,
    pub slots: Vec<ChannelSlot>,
}

pub fn sample_channel(
    config: AntennaConfig,
    slots: usize,
    rng: &mut RandomSource,
) -> Result<ChannelSequence, ModelError> {
    if !config.is_valid() {
        return Err(ModelError::ZeroAntennas {
            m_t: config.m_t,
            m_c: config.m_c,
            m_r: config.m_r,
        });
    }
    if slots == 0 {
        return Err(ModelError::NoSlots);
    }
    Ok(ChannelSequence {
        config,
        slots: (0..slots).map(|_| ChannelSlot::sample(config, rng)).collect(),
    })
}

impl ChannelSequence {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, t: usize) -> Result<&ChannelSlot, ModelError> {
        self.slots.get(t).ok_or(ModelError::SlotOutOfRange {
            slot: t,
            len: self.slots.len(),
        })
    }

    /// All scalar coefficients, slot by slot.
    pub fn coefficients(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.slots
            .iter()
            .flat_map(|s| s.matrices().into_iter().flat_map(|m| m.iter().copied()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ChannelDocument::from(self)).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ChannelDocument = serde_json::from_str(text).map_err(|e| ModelError::Malformed(e.to_string()))?;
        doc.try_into()
    }
}

/// Transmit power and noise for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    /// Z = 0 and P = 1.
    Noiseless,
    /// Unit-variance CN noise; transmit power P = 10^(snr_db/10).
    Awgn { snr_db: f64 },
}

impl NoiseSpec {
    pub fn power(&self) -> f64 {
        match self {
            NoiseSpec::Noiseless => 1.0,
            NoiseSpec::Awgn { snr_db } => 10f64.powf(snr_db / 10.0),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        match self {
            NoiseSpec::Noiseless => 0.0,
            NoiseSpec::Awgn { .. } => 1.0,
        }
    }

    pub fn is_noisy(&self) -> bool {
        matches!(self, NoiseSpec::Awgn { .. })
    }

    pub fn snr_db(&self) -> Option<f64> {
        match self {
            NoiseSpec::Noiseless => None,
            NoiseSpec::Awgn { snr_db } => Some(*snr_db),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutput {
    pub y_a: ComplexVector,
    pub y_b: ComplexVector,
    /// Noise realisations added to `y_a` / `y_b` (zero when noiseless).
    pub z_a: ComplexVector,
    pub z_b: ComplexVector,
    pub noise_enabled: bool,
    pub snr_db: Option<f64>,
}

/// Received signals of slot `t`. Noise, when enabled, is drawn from `rng`
/// (receiver A first).
pub fn channel_output(
    seq: &ChannelSequence,
    t: usize,
    x_a: &ComplexVector,
    x_b: &ComplexVector,
    x_c: &ComplexVector,
    noise: &NoiseSpec,
    rng: &mut RandomSource,
) -> Result<SlotOutput, ModelError> {
    let h = seq.slot(t)?;
    let cfg = seq.config;
    for (node, x, expected) in [("tx_a", x_a, cfg.m_t), ("tx_b", x_b, cfg.m_t), ("relay", x_c, cfg.m_c)] {
        if x.len() != expected {
            return Err(ModelError::InputShape {
                node,
                got: x.len(),
                expected,
            });
        }
    }
    let (z_a, z_b) = if noise.is_noisy() {
        (rng.complex_vector(cfg.m_r), rng.complex_vector(cfg.m_r))
    } else {
        (ComplexVector::zeros(cfg.m_r), ComplexVector::zeros(cfg.m_r))
    };
    let y_a = &h.aa * x_a + &h.ab * x_b + &h.ac * x_c + &z_a;
    let y_b = &h.ba * x_a + &h.bb * x_b + &h.bc * x_c + &z_b;
    Ok(SlotOutput {
        y_a,
        y_b,
        z_a,
        z_b,
        noise_enabled: noise.is_noisy(),
        snr_db: noise.snr_db(),
    })
}

type JsonMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Serialize, Deserialize)]
struct SlotDocument {
    aa: JsonMatrix,
    ab: JsonMatrix,
    ac: JsonMatrix,
    ba: JsonMatrix,
    bb: JsonMatrix,
    bc: JsonMatrix,
}

#[derive(Serialize, Deserialize)]
struct ChannelDocument {
    config: AntennaConfig,
    slots: usize,
    matrices: Vec<SlotDocument>,
}

fn matrix_to_json(m: &ComplexMatrix) -> JsonMatrix {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

fn matrix_from_json(rows: &JsonMatrix, nrows: usize, ncols: usize) -> Result<ComplexMatrix, ModelError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::Malformed(format!("expected a {nrows}x{ncols} matrix")));
    }
    let m = ComplexMatrix::from_fn(nrows, ncols, |r, c| Complex64::new(rows[r][c][0], rows[r][c][1]));
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(ModelError::Malformed("non-finite coefficient".into()));
    }
    Ok(m)
}

impl From<&ChannelSequence> for ChannelDocument {
    fn from(seq: &ChannelSequence) -> Self {
        Self {
            config: seq.config,
            slots: seq.len(),
            matrices: seq
                .slots
                .iter()
                .map(|s| SlotDocument {
                    aa: matrix_to_json(&s.aa),
                    ab: matrix_to_json(&s.ab),
                    ac: matrix_to_json(&s.ac),
                    ba: matrix_to_json(&s.ba),
                    bb: matrix_to_json(&s.bb),
                    bc: matrix_to_json(&s.bc),
                })
                .collect(),
        }
    }
}

impl TryFrom<ChannelDocument> for ChannelSequence {
    type Error = ModelError;

    fn try_from(doc: ChannelDocument) -> Result<Self, Self::Error> {
        let cfg = AntennaConfig::new(doc.config.m_t, doc.config.m_c, doc.config.m_r)?;
        if doc.slots == 0 {
            return Err(ModelError::NoSlots);
        }
        if doc.matrices.len() != doc.slots {
            return Err(ModelError::Malformed(format!(
                "declared {} slots but found {}",
                doc.slots,
                doc.matrices.len()
            )));
        }
        let (t, c, r) = (cfg.m_t, cfg.m_c, cfg.m_r);
        let slots = doc
            .matrices
            .iter()
            .map(|s| {
                Ok(ChannelSlot {
                    aa: matrix_from_json(&s.aa, r, t)?,
                    ab: matrix_from_json(&s.ab, r, t)?,
                    ac: matrix_from_json(&s.ac, r, c)?,
                    ba: matrix_from_json(&s.ba, r, t)?,
                    bb: matrix_from_json(&s.bb, r, t)?,
                    bc: matrix_from_json(&s.bc, r, c)?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(ChannelSequence { config: cfg, slots })
    }
}
