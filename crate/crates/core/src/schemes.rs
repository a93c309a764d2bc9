//! Transmission schemes as declarative per-slot plans, and their execution
//! over a sampled channel.
//!
//! Every plan follows the same shape: fresh random combinations of one
//! user's symbols in the first phases, then retransmission slots in which
//! nodes resend outputs that one receiver already holds and the other
//! receiver needs. Which node resends what, and from which feedback, is
//! what distinguishes the antenna conditions and feedback regimes.
//!
//! Execution tracks each transmitted and received quantity twice: as a
//! realised value and as a linear form over the basis
//! `[symbols of A | symbols of B | receiver noise samples]`. The decoder
//! reads coefficients from the forms, so noise enhancement and residual
//! interference can be measured exactly.

use std::fmt;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::channel_model::{
    channel_output, classify_condition, AntennaConfig, ChannelSequence, Condition, FeedbackKind, FeedbackMode,
    ModelError, NoiseSpec, SlotOutput,
};
use crate::numerics::{numeric_rank, ComplexMatrix, ComplexVector, RandomSource, DEFAULT_RANK_TOL};

/// Resampling budget per slot before a precoder draw is declared inadmissible.
const MAX_PRECODER_ATTEMPTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("channel has {got} slots but the frame needs {needed}")]
    ChannelTooShort { needed: usize, got: usize },
    #[error("channel is for {channel} antennas but the plan is for {plan}")]
    ConfigMismatch {
        plan: AntennaConfig,
        channel: AntennaConfig,
    },
    #[error("user {user} symbol vector has length {got}, expected {expected}")]
    SymbolLength { user: User, got: usize, expected: usize },
    #[error("no admissible precoders for slot {slot} after {attempts} draws")]
    InadmissiblePrecoders { slot: usize, attempts: usize },
    #[error("slot {slot}, {node}: {detail}")]
    InformationViolation { slot: usize, node: Node, detail: String },
    #[error("slot {slot}, {node}: malformed rule: {detail}")]
    MalformedRule { slot: usize, node: Node, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum User {
    A,
    B,
}

impl User {
    pub fn other(self) -> User {
        match self {
            User::A => User::B,
            User::B => User::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            User::A => 0,
            User::B => 1,
        }
    }
}

impl fmt::Display for User {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            User::A => "A",
            User::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Node {
    TxA,
    TxB,
    Relay,
}

impl Node {
    pub const ALL: [Node; 3] = [Node::TxA, Node::TxB, Node::Relay];

    pub fn antennas(self, config: AntennaConfig) -> usize {
        match self {
            Node::TxA | Node::TxB => config.m_t,
            Node::Relay => config.m_c,
        }
    }

    /// The receiver this node serves; the relay serves both.
    pub fn intended(self) -> Option<User> {
        match self {
            Node::TxA => Some(User::A),
            Node::TxB => Some(User::B),
            Node::Relay => None,
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Node::TxA => "transmitter A",
            Node::TxB => "transmitter B",
            Node::Relay => "relay",
        })
    }
}

/// A contiguous range of one user's frame symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SymbolBlock {
    pub user: User,
    pub start: usize,
    pub len: usize,
}

impl SymbolBlock {
    pub fn new(user: User, start: usize, len: usize) -> Self {
        Self { user, start, len }
    }

    pub fn indices(&self) -> impl Iterator<Item = (User, usize)> + '_ {
        (self.start..self.start + self.len).map(move |i| (self.user, i))
    }
}

/// One scalar of a past received vector: antenna `antenna` in slot `slot`
/// (both zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct OutputRef {
    pub slot: usize,
    pub antenna: usize,
}

impl OutputRef {
    pub fn new(slot: usize, antenna: usize) -> Self {
        Self { slot, antenna }
    }
}

/// Outputs of one receiver, one per transmit antenna.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feed {
    pub source: User,
    pub entries: Vec<OutputRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RuleKind {
    Silent,
    /// Random linear combinations of the listed symbols on the first
    /// `antennas` antennas; the rest stay at zero.
    FreshCombination {
        blocks: Vec<SymbolBlock>,
        antennas: usize,
    },
    /// Noise-free reconstruction of the other receiver's past outputs,
    /// built from delayed CSI and known messages.
    ResendOverheard(Feed),
    /// Past outputs of the node's own receiver as fed back (noise included).
    ResendOwnFeedback {
        entries: Vec<OutputRef>,
    },
    /// Antenna-wise sums of two receivers' past outputs (relay only).
    ResendSum {
        first: Feed,
        second: Feed,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransmitRule {
    pub kind: RuleKind,
    /// Amplitude applied at unit power without noise. Fresh precoders are
    /// normalised separately, so their scale is 1.
    pub scale: f64,
}

impl TransmitRule {
    pub fn silent() -> Self {
        Self {
            kind: RuleKind::Silent,
            scale: 1.0,
        }
    }

    pub fn fresh(blocks: Vec<SymbolBlock>, antennas: usize) -> Self {
        Self {
            kind: RuleKind::FreshCombination { blocks, antennas },
            scale: 1.0,
        }
    }

    fn with_kind(kind: RuleKind) -> Self {
        Self { kind, scale: 1.0 }
    }

    pub fn is_silent(&self) -> bool {
        matches!(self.kind, RuleKind::Silent)
    }

    pub fn is_fresh(&self) -> bool {
        matches!(self.kind, RuleKind::FreshCombination { .. })
    }

    /// Antennas driven by this rule.
    pub fn active_antennas(&self) -> usize {
        match &self.kind {
            RuleKind::Silent => 0,
            RuleKind::FreshCombination { antennas, .. } => *antennas,
            RuleKind::ResendOverheard(feed) => feed.entries.len(),
            RuleKind::ResendOwnFeedback { entries } => entries.len(),
            RuleKind::ResendSum { first, .. } => first.entries.len(),
        }
    }

    /// Symbols combined by a fresh rule, in precoder column order.
    pub fn fresh_symbols(&self) -> Vec<(User, usize)> {
        match &self.kind {
            RuleKind::FreshCombination { blocks, .. } => blocks.iter().flat_map(|b| b.indices()).collect(),
            _ => Vec::new(),
        }
    }

    /// For resend rules: per transmit antenna, the past outputs summed on it.
    pub fn resent_parts(&self, node: Node) -> Vec<Vec<(User, OutputRef)>> {
        match &self.kind {
            RuleKind::ResendOverheard(feed) => feed.entries.iter().map(|&r| vec![(feed.source, r)]).collect(),
            RuleKind::ResendOwnFeedback { entries } => {
                let own = node.intended().unwrap_or(User::A);
                entries.iter().map(|&r| vec![(own, r)]).collect()
            }
            RuleKind::ResendSum { first, second } => first
                .entries
                .iter()
                .zip(&second.entries)
                .map(|(&f, &s)| vec![(first.source, f), (second.source, s)])
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Whether the resent values are the raw fed-back outputs (noise
    /// included) rather than noise-free reconstructions from CSI.
    pub fn uses_raw_outputs(&self, mode: FeedbackMode) -> bool {
        match &self.kind {
            RuleKind::ResendOwnFeedback { .. } => true,
            RuleKind::ResendSum { .. } => mode.kind == FeedbackKind::DelayedOutput,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRules {
    pub tx_a: TransmitRule,
    pub tx_b: TransmitRule,
    pub relay: TransmitRule,
}

impl SlotRules {
    pub fn rule(&self, node: Node) -> &TransmitRule {
        match node {
            Node::TxA => &self.tx_a,
            Node::TxB => &self.tx_b,
            Node::Relay => &self.relay,
        }
    }

    fn rule_mut(&mut self, node: Node) -> &mut TransmitRule {
        match node {
            Node::TxA => &mut self.tx_a,
            Node::TxB => &mut self.tx_b,
            Node::Relay => &mut self.relay,
        }
    }

    pub fn active_nodes(&self) -> usize {
        Node::ALL.iter().filter(|&&n| !self.rule(n).is_silent()).count()
    }

    pub fn has_fresh(&self) -> bool {
        Node::ALL.iter().any(|&n| self.rule(n).is_fresh())
    }

    /// Distinct symbols combined in this slot, in first-seen order.
    pub fn fresh_symbols(&self) -> Vec<(User, usize)> {
        let mut seen = Vec::new();
        for node in Node::ALL {
            for sym in self.rule(node).fresh_symbols() {
                if !seen.contains(&sym) {
                    seen.push(sym);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SchemeKind {
    /// Condition I: every receiver decodes all streams jointly.
    MultipleAccess,
    /// Retrospective alignment with feedback at the relay when it needs it.
    Retrospective,
    /// Retrospective alignment with the relay silent during retransmission.
    SilentRelayRetrospective,
    /// One user per slot.
    TimeDivision,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemePlan {
    pub config: AntennaConfig,
    pub mode: FeedbackMode,
    pub condition: Condition,
    pub kind: SchemeKind,
    pub frame_length: usize,
    pub symbols_per_user: usize,
    pub slots: Vec<SlotRules>,
}

impl SchemePlan {
    /// Receivers decode the other user's symbols as well.
    pub fn decodes_jointly(&self) -> bool {
        self.kind == SchemeKind::MultipleAccess
    }
}

fn slot(tx_a: TransmitRule, tx_b: TransmitRule, relay: TransmitRule) -> SlotRules {
    SlotRules { tx_a, tx_b, relay }
}

/// Fresh slot for one user: its transmitter on `tx_antennas`, the relay on
/// `relay_antennas` (silent when zero).
fn fresh_slot(user: User, block: SymbolBlock, tx_antennas: usize, relay_antennas: usize) -> SlotRules {
    let tx = TransmitRule::fresh(vec![block], tx_antennas);
    let relay = if relay_antennas == 0 {
        TransmitRule::silent()
    } else {
        TransmitRule::fresh(vec![block], relay_antennas)
    };
    match user {
        User::A => slot(tx, TransmitRule::silent(), relay),
        User::B => slot(TransmitRule::silent(), tx, relay),
    }
}

/// Transmitter rules of a retransmission slot. `for_a` lists outputs of
/// receiver B that transmitter A resends under delayed CSIT, `for_b`
/// outputs of receiver A for transmitter B. With output feedback each
/// transmitter resends its own receiver's outputs instead, so the two
/// lists swap owners.
fn resend_pair(mode: FeedbackMode, for_a: Vec<OutputRef>, for_b: Vec<OutputRef>) -> (TransmitRule, TransmitRule) {
    if mode.kind == FeedbackKind::DelayedOutput {
        (
            TransmitRule::with_kind(RuleKind::ResendOwnFeedback { entries: for_b }),
            TransmitRule::with_kind(RuleKind::ResendOwnFeedback { entries: for_a }),
        )
    } else {
        (
            TransmitRule::with_kind(RuleKind::ResendOverheard(Feed {
                source: User::B,
                entries: for_a,
            })),
            TransmitRule::with_kind(RuleKind::ResendOverheard(Feed {
                source: User::A,
                entries: for_b,
            })),
        )
    }
}

fn relay_sum(from_b: Vec<OutputRef>, from_a: Vec<OutputRef>) -> TransmitRule {
    TransmitRule::with_kind(RuleKind::ResendSum {
        first: Feed {
            source: User::B,
            entries: from_b,
        },
        second: Feed {
            source: User::A,
            entries: from_a,
        },
    })
}

/// Condition I: all nodes send fresh streams at once; the sum equals
/// min(M_r, 2M_t + M_c). An odd total alternates the extra stream over two
/// slots so both users get the same rate.
fn multiple_access(config: AntennaConfig) -> (Vec<SlotRules>, usize) {
    let total = config.m_r.min(2 * config.m_t + config.m_c);
    let mac_slot = |a: SymbolBlock, b: SymbolBlock| {
        slot(
            TransmitRule::fresh(vec![a], config.m_t),
            TransmitRule::fresh(vec![b], config.m_t),
            TransmitRule::fresh(vec![a, b], config.m_c),
        )
    };
    if total.is_multiple_of(2) {
        let s = total / 2;
        (
            vec![mac_slot(
                SymbolBlock::new(User::A, 0, s),
                SymbolBlock::new(User::B, 0, s),
            )],
            s,
        )
    } else {
        let hi = total.div_ceil(2);
        let lo = total / 2;
        (
            vec![
                mac_slot(SymbolBlock::new(User::A, 0, hi), SymbolBlock::new(User::B, 0, lo)),
                mac_slot(SymbolBlock::new(User::A, hi, lo), SymbolBlock::new(User::B, lo, hi)),
            ],
            total,
        )
    }
}

/// One user per slot with min(M_r, M_t + M_c) streams.
fn time_division(config: AntennaConfig) -> (Vec<SlotRules>, usize) {
    let s = config.m_r.min(config.joint());
    (
        vec![
            fresh_slot(User::A, SymbolBlock::new(User::A, 0, s), config.m_t, config.m_c),
            fresh_slot(User::B, SymbolBlock::new(User::B, 0, s), config.m_t, config.m_c),
        ],
        s,
    )
}

/// Conditions II and III: M_r slots per user, each carrying M_t + M_c fresh
/// symbols, then M_t + M_c - M_r slots in which antenna k of the earlier
/// outputs is exchanged. Under Condition II the relay adds the remaining
/// M_r - M_t outputs as sums; under Condition III the transmitters carry
/// all M_r of them.
fn retrospective_long(config: AntennaConfig, mode: FeedbackMode, relay_sums: bool) -> (Vec<SlotRules>, usize) {
    let AntennaConfig { m_t, m_c, m_r } = config;
    let joint = m_t + m_c;
    let mut slots = Vec::with_capacity(joint + m_r);
    for user in [User::A, User::B] {
        for j in 0..m_r {
            slots.push(fresh_slot(user, SymbolBlock::new(user, j * joint, joint), m_t, m_c));
        }
    }
    for k in 0..joint - m_r {
        let direct = if relay_sums { m_t } else { m_r };
        let for_a = (0..direct).map(|j| OutputRef::new(j, k)).collect();
        let for_b = (0..direct).map(|j| OutputRef::new(m_r + j, k)).collect();
        let (tx_a, tx_b) = resend_pair(mode, for_a, for_b);
        let relay = if relay_sums {
            relay_sum(
                (m_t..m_r).map(|j| OutputRef::new(j, k)).collect(),
                (m_t..m_r).map(|j| OutputRef::new(m_r + j, k)).collect(),
            )
        } else {
            TransmitRule::silent()
        };
        slots.push(slot(tx_a, tx_b, relay));
    }
    (slots, joint * m_r)
}

/// Conditions IV and V: one fresh slot per user carrying 2M_r symbols, then
/// one slot returning the M_r overheard outputs.
fn retrospective_short(config: AntennaConfig, mode: FeedbackMode, condition: Condition) -> (Vec<SlotRules>, usize) {
    let AntennaConfig { m_t, m_r, .. } = config;
    let s = 2 * m_r;
    let relay_antennas = s.saturating_sub(m_t);
    let tx_antennas = m_t;
    let mut slots = vec![
        fresh_slot(User::A, SymbolBlock::new(User::A, 0, s), tx_antennas, relay_antennas),
        fresh_slot(User::B, SymbolBlock::new(User::B, 0, s), tx_antennas, relay_antennas),
    ];
    let retransmit = if condition == Condition::IV {
        let (tx_a, tx_b) = resend_pair(
            mode,
            (0..m_t).map(|i| OutputRef::new(0, i)).collect(),
            (0..m_t).map(|i| OutputRef::new(1, i)).collect(),
        );
        let relay = relay_sum(
            (m_t..m_r).map(|i| OutputRef::new(0, i)).collect(),
            (m_t..m_r).map(|i| OutputRef::new(1, i)).collect(),
        );
        slot(tx_a, tx_b, relay)
    } else {
        let (tx_a, tx_b) = resend_pair(
            mode,
            (0..m_r).map(|i| OutputRef::new(0, i)).collect(),
            (0..m_r).map(|i| OutputRef::new(1, i)).collect(),
        );
        slot(tx_a, tx_b, TransmitRule::silent())
    };
    slots.push(retransmit);
    (slots, s)
}

/// Condition II without relay feedback (2M_t >= M_r): M_t fresh slots per
/// user, then M_t + M_c - M_r slots where only the transmitters resend.
fn silent_relay_long(config: AntennaConfig, mode: FeedbackMode) -> (Vec<SlotRules>, usize) {
    let AntennaConfig { m_t, m_c, m_r } = config;
    let joint = m_t + m_c;
    let mut slots = Vec::new();
    for user in [User::A, User::B] {
        for j in 0..m_t {
            slots.push(fresh_slot(user, SymbolBlock::new(user, j * joint, joint), m_t, m_c));
        }
    }
    for k in 0..joint - m_r {
        let (tx_a, tx_b) = resend_pair(
            mode,
            (0..m_t).map(|j| OutputRef::new(j, k)).collect(),
            (0..m_t).map(|j| OutputRef::new(m_t + j, k)).collect(),
        );
        slots.push(slot(tx_a, tx_b, TransmitRule::silent()));
    }
    (slots, joint * m_t)
}

/// Condition IV without relay feedback (2M_t >= M_r): M_t + M_r symbols per
/// user over three slots.
fn silent_relay_short(config: AntennaConfig, mode: FeedbackMode) -> (Vec<SlotRules>, usize) {
    let AntennaConfig { m_t, m_r, .. } = config;
    let s = m_t + m_r;
    let (tx_a, tx_b) = resend_pair(
        mode,
        (0..m_t).map(|i| OutputRef::new(0, i)).collect(),
        (0..m_t).map(|i| OutputRef::new(1, i)).collect(),
    );
    (
        vec![
            fresh_slot(User::A, SymbolBlock::new(User::A, 0, s), m_t, m_r),
            fresh_slot(User::B, SymbolBlock::new(User::B, 0, s), m_t, m_r),
            slot(tx_a, tx_b, TransmitRule::silent()),
        ],
        s,
    )
}

pub fn build_scheme(config: AntennaConfig, mode: FeedbackMode) -> SchemePlan {
    let condition = classify_condition(config);
    let relay_fed = mode.relay_has_feedback && mode.kind != FeedbackKind::NoFeedback;
    let enough_tx = 2 * config.m_t >= config.m_r;
    let (kind, (slots, symbols_per_user)) = match (mode.kind, condition) {
        (_, Condition::I) => (SchemeKind::MultipleAccess, multiple_access(config)),
        (FeedbackKind::NoFeedback, _) => (SchemeKind::TimeDivision, time_division(config)),
        (_, Condition::III) => (SchemeKind::Retrospective, retrospective_long(config, mode, false)),
        (_, Condition::V) => (
            SchemeKind::Retrospective,
            retrospective_short(config, mode, Condition::V),
        ),
        (_, Condition::II) if relay_fed => (SchemeKind::Retrospective, retrospective_long(config, mode, true)),
        (_, Condition::IV) if relay_fed => (
            SchemeKind::Retrospective,
            retrospective_short(config, mode, Condition::IV),
        ),
        (_, Condition::II) if enough_tx => (SchemeKind::SilentRelayRetrospective, silent_relay_long(config, mode)),
        (_, Condition::IV) if enough_tx => (SchemeKind::SilentRelayRetrospective, silent_relay_short(config, mode)),
        _ => (SchemeKind::TimeDivision, time_division(config)),
    };
    let mut plan = SchemePlan {
        config,
        mode,
        condition,
        kind,
        frame_length: slots.len(),
        symbols_per_user,
        slots,
    };
    for t in 0..plan.frame_length {
        for node in Node::ALL {
            let scale = rule_amplitude(&plan, t, node, &NoiseSpec::Noiseless);
            plan.slots[t].rule_mut(node).scale = scale;
        }
    }
    plan
}

/// Amplitude that gives a node's transmission expected energy P per slot.
/// Channel entries have unit variance, so an output scalar of slot s has
/// expected power (active nodes in s) * P, plus the noise variance when it
/// is a raw fed-back value.
pub fn rule_amplitude(plan: &SchemePlan, t: usize, node: Node, noise: &NoiseSpec) -> f64 {
    let rule = plan.slots[t].rule(node);
    let power = noise.power();
    match &rule.kind {
        RuleKind::Silent => 0.0,
        RuleKind::FreshCombination { .. } => power.sqrt(),
        _ => {
            let parts = rule.resent_parts(node);
            if parts.is_empty() {
                return 0.0;
            }
            let raw = rule.uses_raw_outputs(plan.mode);
            let noise_var = if raw { noise.noise_variance() } else { 0.0 };
            let energy: f64 = parts
                .iter()
                .flatten()
                .map(|(_, r)| plan.slots[r.slot].active_nodes() as f64 * power + noise_var)
                .sum();
            (power / energy).sqrt()
        }
    }
}

/// Precoders of one slot; each is (active antennas) x (symbols combined),
/// normalised to unit Frobenius norm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotPrecoders {
    pub tx_a: Option<ComplexMatrix>,
    pub tx_b: Option<ComplexMatrix>,
    pub relay: Option<ComplexMatrix>,
}

impl SlotPrecoders {
    pub fn get(&self, node: Node) -> Option<&ComplexMatrix> {
        match node {
            Node::TxA => self.tx_a.as_ref(),
            Node::TxB => self.tx_b.as_ref(),
            Node::Relay => self.relay.as_ref(),
        }
    }

    fn set(&mut self, node: Node, m: ComplexMatrix) {
        match node {
            Node::TxA => self.tx_a = Some(m),
            Node::TxB => self.tx_b = Some(m),
            Node::Relay => self.relay = Some(m),
        }
    }
}

/// The slot's fresh precoders stacked over the union of the symbols they
/// combine, one row per active antenna. Admissible iff this stack has full
/// column rank, i.e. every node sends a distinct combination.
pub fn precoder_admissible(rules: &SlotRules, precoders: &SlotPrecoders) -> bool {
    let columns = rules.fresh_symbols();
    if columns.is_empty() {
        return true;
    }
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for node in Node::ALL {
        let rule = rules.rule(node);
        if !rule.is_fresh() {
            continue;
        }
        let Some(p) = precoders.get(node) else {
            return false;
        };
        let syms = rule.fresh_symbols();
        if p.ncols() != syms.len() || p.nrows() != rule.active_antennas() {
            return false;
        }
        for r in 0..p.nrows() {
            let mut row = vec![Complex64::new(0.0, 0.0); columns.len()];
            for (c, sym) in syms.iter().enumerate() {
                let col = columns.iter().position(|s| s == sym).expect("collected above");
                row[col] = p[(r, c)];
            }
            rows.push(row);
        }
    }
    let stacked = ComplexMatrix::from_fn(rows.len(), columns.len(), |r, c| rows[r][c]);
    numeric_rank(&stacked, DEFAULT_RANK_TOL).numeric_rank == columns.len()
}

pub fn draw_precoders(plan: &SchemePlan, rng: &mut RandomSource) -> Result<Vec<SlotPrecoders>, SchemeError> {
    let mut all = Vec::with_capacity(plan.frame_length);
    for (t, rules) in plan.slots.iter().enumerate() {
        let mut attempts = 0;
        let drawn = loop {
            attempts += 1;
            let mut p = SlotPrecoders::default();
            for node in Node::ALL {
                let rule = rules.rule(node);
                if rule.is_fresh() {
                    let mut m = rng.complex_matrix(rule.active_antennas(), rule.fresh_symbols().len());
                    let norm = m.norm();
                    if norm > 0.0 {
                        m /= Complex64::new(norm, 0.0);
                    }
                    p.set(node, m);
                }
            }
            if precoder_admissible(rules, &p) {
                break p;
            }
            if attempts >= MAX_PRECODER_ATTEMPTS {
                return Err(SchemeError::InadmissiblePrecoders { slot: t, attempts });
            }
        };
        all.push(drawn);
    }
    Ok(all)
}

/// Index layout of the linear forms: symbols of A, symbols of B, then the
/// noise samples of receiver A and of receiver B, slot-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalBasis {
    pub symbols_per_user: usize,
    pub slots: usize,
    pub m_r: usize,
}

impl SignalBasis {
    pub fn len(&self) -> usize {
        2 * self.symbols_per_user + 2 * self.slots * self.m_r
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn symbol(&self, user: User, i: usize) -> usize {
        user.index() * self.symbols_per_user + i
    }

    pub fn symbol_range(&self, user: User) -> std::ops::Range<usize> {
        let start = user.index() * self.symbols_per_user;
        start..start + self.symbols_per_user
    }

    pub fn noise(&self, user: User, slot: usize, antenna: usize) -> usize {
        2 * self.symbols_per_user + (user.index() * self.slots + slot) * self.m_r + antenna
    }

    pub fn noise_range(&self) -> std::ops::Range<usize> {
        2 * self.symbols_per_user..self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserSymbols {
    pub a: ComplexVector,
    pub b: ComplexVector,
}

impl UserSymbols {
    pub fn random(symbols_per_user: usize, rng: &mut RandomSource) -> Self {
        Self {
            a: rng.complex_vector(symbols_per_user),
            b: rng.complex_vector(symbols_per_user),
        }
    }

    pub fn zeros(symbols_per_user: usize) -> Self {
        Self {
            a: ComplexVector::zeros(symbols_per_user),
            b: ComplexVector::zeros(symbols_per_user),
        }
    }

    pub fn of(&self, user: User) -> &ComplexVector {
        match user {
            User::A => &self.a,
            User::B => &self.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub x_a: ComplexVector,
    pub x_b: ComplexVector,
    pub x_c: ComplexVector,
    pub output: SlotOutput,
    /// Realised amplitudes for (TxA, TxB, Relay).
    pub amplitudes: [f64; 3],
    /// Linear forms (rows x basis) of the transmitted and received vectors.
    pub x_forms: [ComplexMatrix; 3],
    pub y_a_form: ComplexMatrix,
    pub y_b_form: ComplexMatrix,
}

impl SlotRecord {
    pub fn x(&self, node: Node) -> &ComplexVector {
        match node {
            Node::TxA => &self.x_a,
            Node::TxB => &self.x_b,
            Node::Relay => &self.x_c,
        }
    }

    pub fn amplitude(&self, node: Node) -> f64 {
        self.amplitudes[node_index(node)]
    }

    pub fn y(&self, user: User) -> &ComplexVector {
        match user {
            User::A => &self.output.y_a,
            User::B => &self.output.y_b,
        }
    }

    pub fn z(&self, user: User) -> &ComplexVector {
        match user {
            User::A => &self.output.z_a,
            User::B => &self.output.z_b,
        }
    }

    pub fn y_form(&self, user: User) -> &ComplexMatrix {
        match user {
            User::A => &self.y_a_form,
            User::B => &self.y_b_form,
        }
    }
}

fn node_index(node: Node) -> usize {
    match node {
        Node::TxA => 0,
        Node::TxB => 1,
        Node::Relay => 2,
    }
}

#[derive(Debug, Clone)]
pub struct Transcript {
    pub plan: SchemePlan,
    pub channel: ChannelSequence,
    pub noise: NoiseSpec,
    pub symbols: UserSymbols,
    pub precoders: Vec<SlotPrecoders>,
    pub basis: SignalBasis,
    pub slots: Vec<SlotRecord>,
}

impl Transcript {
    /// Values of the basis variables: the planted symbols and the noise draws.
    pub fn basis_values(&self) -> ComplexVector {
        let mut v = ComplexVector::zeros(self.basis.len());
        for user in [User::A, User::B] {
            for (i, s) in self.symbols.of(user).iter().enumerate() {
                v[self.basis.symbol(user, i)] = *s;
            }
            for (t, rec) in self.slots.iter().enumerate() {
                for (k, z) in rec.z(user).iter().enumerate() {
                    v[self.basis.noise(user, t, k)] = *z;
                }
            }
        }
        v
    }
}

/// Checks that a node is entitled to the information a rule consumes:
/// reconstructions need delayed CSI, raw outputs need output feedback from
/// the node's own receiver (or from both, at the relay), and everything
/// must date from earlier slots.
fn check_information(mode: FeedbackMode, t: usize, node: Node, rule: &TransmitRule) -> Result<(), SchemeError> {
    let violation = |detail: String| SchemeError::InformationViolation { slot: t, node, detail };
    let parts = rule.resent_parts(node);
    if parts.is_empty() {
        return Ok(());
    }
    if mode.kind == FeedbackKind::NoFeedback {
        return Err(violation("no feedback is available".into()));
    }
    if node == Node::Relay && !mode.relay_has_feedback {
        return Err(violation("the relay has no feedback".into()));
    }
    if let RuleKind::ResendSum { .. } = rule.kind {
        if node != Node::Relay {
            return Err(violation("only the relay sends output sums".into()));
        }
    }
    let raw = rule.uses_raw_outputs(mode);
    if raw && !mode.kind.has_output() {
        return Err(violation("raw outputs need output feedback".into()));
    }
    if !raw && !mode.kind.has_csi() {
        return Err(violation("reconstructing outputs needs delayed CSI".into()));
    }
    for (source, r) in parts.iter().flatten() {
        if r.slot >= t {
            return Err(violation(format!("output of slot {} is not yet known", r.slot)));
        }
        if raw && node != Node::Relay && Some(*source) != node.intended() {
            return Err(violation(format!("receiver {source} does not feed this node back")));
        }
    }
    Ok(())
}

fn check_shapes(plan: &SchemePlan, t: usize, node: Node, rule: &TransmitRule) -> Result<(), SchemeError> {
    let malformed = |detail: String| SchemeError::MalformedRule { slot: t, node, detail };
    let cfg = plan.config;
    if rule.active_antennas() > node.antennas(cfg) {
        return Err(malformed(format!(
            "drives {} antennas but the node has {}",
            rule.active_antennas(),
            node.antennas(cfg)
        )));
    }
    match &rule.kind {
        RuleKind::FreshCombination { blocks, antennas } => {
            if *antennas == 0 || blocks.is_empty() {
                return Err(malformed("empty fresh combination".into()));
            }
            if blocks.iter().any(|b| b.start + b.len > plan.symbols_per_user) {
                return Err(malformed("symbol block outside the frame".into()));
            }
        }
        RuleKind::ResendSum { first, second } if first.entries.len() != second.entries.len() => {
            return Err(malformed("summed feeds differ in length".into()));
        }
        _ => {}
    }
    for (_, r) in rule.resent_parts(node).iter().flatten() {
        if r.antenna >= cfg.m_r || r.slot >= plan.frame_length {
            return Err(malformed(format!("output ({}, {}) does not exist", r.slot, r.antenna)));
        }
    }
    Ok(())
}

/// Validates every rule of a plan against shapes and information access.
pub fn validate_plan(plan: &SchemePlan) -> Result<(), SchemeError> {
    for (t, rules) in plan.slots.iter().enumerate() {
        for node in Node::ALL {
            let rule = rules.rule(node);
            check_shapes(plan, t, node, rule)?;
            check_information(plan.mode, t, node, rule)?;
        }
    }
    Ok(())
}

fn clean(form: &ComplexMatrix, basis: &SignalBasis) -> ComplexMatrix {
    let mut f = form.clone();
    for c in basis.noise_range() {
        f.column_mut(c).fill(Complex64::new(0.0, 0.0));
    }
    f
}

#[allow(clippy::too_many_arguments)]
/// One node's transmission in slot `t`, computed only from `history`
/// (records of slots before `t`), the node's precoder and the messages.
fn transmit(
    plan: &SchemePlan,
    t: usize,
    node: Node,
    precoder: Option<&ComplexMatrix>,
    symbols: &UserSymbols,
    basis: &SignalBasis,
    history: &[SlotRecord],
    amplitude: f64,
) -> Result<(ComplexVector, ComplexMatrix), SchemeError> {
    let rule = plan.slots[t].rule(node);
    check_information(plan.mode, t, node, rule)?;
    let n = node.antennas(plan.config);
    let mut x = ComplexVector::zeros(n);
    let mut form = ComplexMatrix::zeros(n, basis.len());
    let amp = Complex64::new(amplitude, 0.0);
    match &rule.kind {
        RuleKind::Silent => {}
        RuleKind::FreshCombination { .. } => {
            let p = precoder.ok_or_else(|| SchemeError::MalformedRule {
                slot: t,
                node,
                detail: "missing precoder".into(),
            })?;
            let syms = rule.fresh_symbols();
            for r in 0..p.nrows() {
                for (c, &(user, i)) in syms.iter().enumerate() {
                    let coeff = p[(r, c)] * amp;
                    x[r] += coeff * symbols.of(user)[i];
                    form[(r, basis.symbol(user, i))] += coeff;
                }
            }
        }
        _ => {
            let raw = rule.uses_raw_outputs(plan.mode);
            for (antenna, parts) in rule.resent_parts(node).iter().enumerate() {
                for &(source, r) in parts {
                    let rec = history.get(r.slot).ok_or_else(|| SchemeError::InformationViolation {
                        slot: t,
                        node,
                        detail: format!("output of slot {} is not yet known", r.slot),
                    })?;
                    let y_form = rec.y_form(source);
                    let row = if raw {
                        y_form.row(r.antenna).into_owned()
                    } else {
                        clean(&y_form.rows(r.antenna, 1).into_owned(), basis)
                            .row(0)
                            .into_owned()
                    };
                    let value = if raw {
                        rec.y(source)[r.antenna]
                    } else {
                        rec.y(source)[r.antenna] - rec.z(source)[r.antenna]
                    };
                    x[antenna] += amp * value;
                    let mut target = form.row_mut(antenna);
                    target += row * amp;
                }
            }
        }
    }
    Ok((x, form))
}

/// Executes a plan. Precoders are drawn first for the whole frame, then
/// noise slot by slot, so the precoder stream does not depend on the noise
/// setting.
pub fn run_scheme(
    plan: &SchemePlan,
    channel: &ChannelSequence,
    symbols: &UserSymbols,
    noise: &NoiseSpec,
    rng: &mut RandomSource,
) -> Result<Transcript, SchemeError> {
    let precoders = draw_precoders(plan, rng)?;
    run_with_precoders(plan, channel, symbols, noise, precoders, rng)
}

/// Executes a plan with given precoders; noise is drawn from `rng`.
pub fn run_with_precoders(
    plan: &SchemePlan,
    channel: &ChannelSequence,
    symbols: &UserSymbols,
    noise: &NoiseSpec,
    precoders: Vec<SlotPrecoders>,
    rng: &mut RandomSource,
) -> Result<Transcript, SchemeError> {
    if channel.config != plan.config {
        return Err(SchemeError::ConfigMismatch {
            plan: plan.config,
            channel: channel.config,
        });
    }
    if channel.len() < plan.frame_length {
        return Err(SchemeError::ChannelTooShort {
            needed: plan.frame_length,
            got: channel.len(),
        });
    }
    for user in [User::A, User::B] {
        let got = symbols.of(user).len();
        if got != plan.symbols_per_user {
            return Err(SchemeError::SymbolLength {
                user,
                got,
                expected: plan.symbols_per_user,
            });
        }
    }
    validate_plan(plan)?;
    if precoders.len() != plan.frame_length {
        return Err(SchemeError::MalformedRule {
            slot: precoders.len(),
            node: Node::TxA,
            detail: "precoder list does not cover the frame".into(),
        });
    }
    let basis = SignalBasis {
        symbols_per_user: plan.symbols_per_user,
        slots: plan.frame_length,
        m_r: plan.config.m_r,
    };
    let mut records: Vec<SlotRecord> = Vec::with_capacity(plan.frame_length);
    for t in 0..plan.frame_length {
        let mut xs = Vec::with_capacity(3);
        let mut amplitudes = [0.0; 3];
        for node in Node::ALL {
            let amplitude = rule_amplitude(plan, t, node, noise);
            amplitudes[node_index(node)] = amplitude;
            xs.push(transmit(
                plan,
                t,
                node,
                precoders[t].get(node),
                symbols,
                &basis,
                &records,
                amplitude,
            )?);
        }
        let [(x_a, fa), (x_b, fb), (x_c, fc)]: [(ComplexVector, ComplexMatrix); 3] =
            xs.try_into().expect("three nodes");
        let output = channel_output(channel, t, &x_a, &x_b, &x_c, noise, rng)?;
        let h = &channel.slots[t];
        let mut y_a_form = &h.aa * &fa + &h.ab * &fb + &h.ac * &fc;
        let mut y_b_form = &h.ba * &fa + &h.bb * &fb + &h.bc * &fc;
        for k in 0..plan.config.m_r {
            y_a_form[(k, basis.noise(User::A, t, k))] += Complex64::new(1.0, 0.0);
            y_b_form[(k, basis.noise(User::B, t, k))] += Complex64::new(1.0, 0.0);
        }
        records.push(SlotRecord {
            x_a,
            x_b,
            x_c,
            output,
            amplitudes,
            x_forms: [fa, fb, fc],
            y_a_form,
            y_b_form,
        });
    }
    Ok(Transcript {
        plan: plan.clone(),
        channel: channel.clone(),
        noise: *noise,
        symbols: symbols.clone(),
        precoders,
        basis,
        slots: records,
    })
}
