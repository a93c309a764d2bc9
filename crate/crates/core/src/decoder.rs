//! Linear zero-forcing receivers.
//!
//! A receiver keeps the outputs of slots that carry its own symbols as
//! direct equations. In a retransmission slot it subtracts everything
//! built from its own past outputs, then projects the remainder onto the
//! unknown overheard outputs, each of which is another equation in its
//! symbols.

use num_complex::Complex64;
use num_rational::Ratio;
use serde::Serialize;

use crate::channel_model::ChannelSlot;
use crate::numerics::{
    log2_det_hpd, numeric_rank, pseudo_inverse, solve_least_squares, ComplexMatrix, ComplexVector, RankReport,
    DEFAULT_RANK_TOL,
};
use crate::schemes::{Node, OutputRef, SchemePlan, SignalBasis, Transcript, User};

/// Channel magnitude below which a scalar division is refused.
pub const DEGENERATE_COEFFICIENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Provenance {
    /// Slot whose received vector produced the row.
    pub slot: usize,
    pub receiver: User,
    /// Antenna of `slot` for a direct row, or the recovered output.
    pub antenna: usize,
    /// The other receiver's output recovered from a retransmission.
    pub recovered: Option<OutputRef>,
}

#[derive(Debug, Clone)]
pub struct EquationSystem {
    pub receiver: User,
    /// Columns: the receiver's symbols, then the other user's symbols when
    /// decoding jointly.
    pub matrix: ComplexMatrix,
    pub rhs: ComplexVector,
    pub provenance: Vec<Provenance>,
    pub desired: usize,
    pub nuisance: usize,
    /// Each row as a form over the transcript basis, after processing.
    pub forms: ComplexMatrix,
    pub basis: SignalBasis,
    /// Some retransmission could not be inverted.
    pub degenerate: bool,
    /// Largest deviation between a processed row and the coefficients it
    /// was assigned, over all symbol columns.
    pub cancellation_residual: f64,
    pub noise_variance: f64,
}

impl EquationSystem {
    pub fn columns(&self) -> usize {
        self.desired + self.nuisance
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecodeReport {
    pub decodable: bool,
    #[serde(serialize_with = "serialize_rank")]
    pub rank: RankReport,
    pub condition_number: f64,
    #[serde(serialize_with = "serialize_vector")]
    pub symbol_estimates: ComplexVector,
    pub max_symbol_error: Option<f64>,
    pub cancellation_residual: f64,
    pub degenerate: bool,
}

fn serialize_rank<S: serde::Serializer>(r: &RankReport, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = s.serialize_struct("RankReport", 4)?;
    st.serialize_field("numeric_rank", &r.numeric_rank)?;
    st.serialize_field("singular_values", &r.singular_values)?;
    st.serialize_field("tolerance_used", &r.tolerance_used)?;
    st.serialize_field("condition_number", &finite_or_none(r.condition_number))?;
    st.end()
}

fn serialize_vector<S: serde::Serializer>(v: &ComplexVector, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v.iter() {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn link(slot: &ChannelSlot, receiver: User, node: Node) -> &ComplexMatrix {
    match (receiver, node) {
        (User::A, Node::TxA) => &slot.aa,
        (User::A, Node::TxB) => &slot.ab,
        (User::A, Node::Relay) => &slot.ac,
        (User::B, Node::TxA) => &slot.ba,
        (User::B, Node::TxB) => &slot.bb,
        (User::B, Node::Relay) => &slot.bc,
    }
}

struct Row {
    coefficients: Vec<Complex64>,
    value: Complex64,
    form: Vec<Complex64>,
    provenance: Provenance,
}

fn symbol_columns(basis: &SignalBasis, receiver: User, joint: bool) -> Vec<usize> {
    let mut cols: Vec<usize> = basis.symbol_range(receiver).collect();
    if joint {
        cols.extend(basis.symbol_range(receiver.other()));
    }
    cols
}

pub fn eliminate_known_interference(transcript: &Transcript, receiver: User) -> EquationSystem {
    let plan = &transcript.plan;
    let basis = transcript.basis;
    let joint = plan.decodes_jointly();
    let columns = symbol_columns(&basis, receiver, joint);
    let all_symbols: Vec<usize> = (0..2 * basis.symbols_per_user).collect();
    let m_r = plan.config.m_r;
    let mut rows: Vec<Row> = Vec::new();
    let mut degenerate = false;
    let mut residual: f64 = 0.0;

    for (t, rules) in plan.slots.iter().enumerate() {
        let rec = &transcript.slots[t];
        let y = rec.y(receiver);
        let y_form = rec.y_form(receiver);
        if rules.has_fresh() {
            let carries_own = rules.fresh_symbols().iter().any(|&(u, _)| u == receiver);
            if !(joint || carries_own) {
                continue;
            }
            for k in 0..m_r {
                let form: Vec<Complex64> = y_form.row(k).iter().copied().collect();
                for &c in &all_symbols {
                    if !columns.contains(&c) {
                        residual = residual.max(form[c].norm());
                    }
                }
                rows.push(Row {
                    coefficients: columns.iter().map(|&c| form[c]).collect(),
                    value: y[k],
                    form,
                    provenance: Provenance {
                        slot: t,
                        receiver,
                        antenna: k,
                        recovered: None,
                    },
                });
            }
            continue;
        }
        if rules.active_nodes() == 0 {
            continue;
        }

        // Retransmission slot.
        let h = &transcript.channel.slots[t];
        let mut unknowns: Vec<(User, OutputRef)> = Vec::new();
        let mut mixing: Vec<ComplexVector> = Vec::new();
        let mut rest = y.clone();
        let mut rest_form = y_form.clone();
        for node in Node::ALL {
            let rule = rules.rule(node);
            let amp = Complex64::new(rec.amplitude(node), 0.0);
            let gains = link(h, receiver, node);
            for (antenna, parts) in rule.resent_parts(node).iter().enumerate() {
                let g = gains.column(antenna).into_owned() * amp;
                for &(source, r) in parts {
                    if source == receiver {
                        let past = &transcript.slots[r.slot];
                        rest -= &g * past.y(receiver)[r.antenna];
                        rest_form -= &g * past.y_form(receiver).row(r.antenna);
                    } else {
                        let idx = match unknowns.iter().position(|&u| u == (source, r)) {
                            Some(i) => i,
                            None => {
                                unknowns.push((source, r));
                                mixing.push(ComplexVector::zeros(m_r));
                                unknowns.len() - 1
                            }
                        };
                        mixing[idx] += &g;
                    }
                }
            }
        }
        if unknowns.is_empty() {
            continue;
        }
        let m = ComplexMatrix::from_columns(&mixing);
        let rank = numeric_rank(&m, DEFAULT_RANK_TOL).numeric_rank;
        if rank < m.ncols() || (m.nrows() == 1 && m.ncols() == 1 && m[(0, 0)].norm() < DEGENERATE_COEFFICIENT) {
            degenerate = true;
            continue;
        }
        let pinv = pseudo_inverse(&m, DEFAULT_RANK_TOL);
        let values = &pinv * &rest;
        let forms = &pinv * &rest_form;
        for (i, &(source, r)) in unknowns.iter().enumerate() {
            let target = transcript.slots[r.slot].y_form(source).row(r.antenna).into_owned();
            let form: Vec<Complex64> = forms.row(i).iter().copied().collect();
            for &c in &all_symbols {
                residual = residual.max((form[c] - target[c]).norm());
                if !columns.contains(&c) {
                    residual = residual.max(target[c].norm());
                }
            }
            rows.push(Row {
                coefficients: columns.iter().map(|&c| target[c]).collect(),
                value: values[i],
                form,
                provenance: Provenance {
                    slot: t,
                    receiver,
                    antenna: r.antenna,
                    recovered: Some(r),
                },
            });
        }
    }

    let n = rows.len();
    let ncols = columns.len();
    EquationSystem {
        receiver,
        matrix: ComplexMatrix::from_fn(n, ncols, |i, j| rows[i].coefficients[j]),
        rhs: ComplexVector::from_iterator(n, rows.iter().map(|r| r.value)),
        forms: ComplexMatrix::from_fn(n, basis.len(), |i, j| rows[i].form[j]),
        provenance: rows.iter().map(|r| r.provenance).collect(),
        desired: basis.symbols_per_user,
        nuisance: if joint { basis.symbols_per_user } else { 0 },
        basis,
        degenerate,
        cancellation_residual: residual,
        noise_variance: transcript.noise.noise_variance(),
    }
}

/// Least-squares solve with a rank gate; estimates cover the desired
/// symbols only.
pub fn decode(system: &EquationSystem, truth: Option<&ComplexVector>) -> DecodeReport {
    let cols = system.columns();
    let rank = numeric_rank(&system.matrix, DEFAULT_RANK_TOL);
    let decodable = cols > 0 && rank.numeric_rank == cols;
    let estimates = match solve_least_squares(&system.matrix, &system.rhs, DEFAULT_RANK_TOL) {
        Ok(ls) => ls.x.rows(0, system.desired).into_owned(),
        Err(_) => ComplexVector::zeros(system.desired),
    };
    let max_symbol_error = truth.map(|t| {
        if t.len() != estimates.len() {
            f64::INFINITY
        } else {
            (&estimates - t).iter().map(|z| z.norm()).fold(0.0, f64::max)
        }
    });
    DecodeReport {
        decodable,
        condition_number: rank.column_conditioning(cols),
        rank,
        symbol_estimates: estimates,
        max_symbol_error,
        cancellation_residual: system.cancellation_residual,
        degenerate: system.degenerate,
    }
}

/// Per-slot streams of a decoded plan, (S/T, S/T).
pub fn streams_per_frame(a: &DecodeReport, b: &DecodeReport, plan: &SchemePlan) -> Option<(Ratio<i64>, Ratio<i64>)> {
    if !(a.decodable && b.decodable) || plan.frame_length == 0 {
        return None;
    }
    let d = Ratio::new(plan.symbols_per_user as i64, plan.frame_length as i64);
    Some((d, d))
}

/// Mutual information in bits per frame between the receiver's desired
/// symbols and its processed equations, with unit-variance Gaussian
/// symbols and every other symbol treated as Gaussian interference.
pub fn desired_information(system: &EquationSystem) -> Option<f64> {
    if system.rows() == 0 || system.noise_variance == 0.0 {
        return None;
    }
    let b = &system.basis;
    let desired = system
        .forms
        .columns(b.symbol_range(system.receiver).start, b.symbols_per_user);
    let other = system
        .forms
        .columns(b.symbol_range(system.receiver.other()).start, b.symbols_per_user);
    let noise = system.forms.columns(b.noise_range().start, b.noise_range().len());
    let var = Complex64::new(system.noise_variance, 0.0);
    let k = noise * noise.adjoint() * var;
    let interference = &k + other * other.adjoint();
    let total = &interference + desired * desired.adjoint();
    Some(log2_det_hpd(&total)? - log2_det_hpd(&interference)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::{sample_channel, AntennaConfig, FeedbackKind, FeedbackMode, NoiseSpec};
    use crate::numerics::seeded_rng;
    use crate::schemes::{build_scheme, run_scheme, UserSymbols};

    fn transcript(config: AntennaConfig, mode: FeedbackMode, seed: u64, noise: NoiseSpec) -> Transcript {
        let plan = build_scheme(config, mode);
        let mut rng = seeded_rng(seed);
        let channel = sample_channel(config, plan.frame_length, &mut rng).unwrap();
        let symbols = UserSymbols::random(plan.symbols_per_user, &mut rng);
        run_scheme(&plan, &channel, &symbols, &noise, &mut rng).unwrap()
    }

    fn recovered_row(system: &EquationSystem) -> usize {
        system.provenance.iter().position(|p| p.recovered.is_some()).unwrap()
    }

    #[test]
    fn siso_csit_recovers_overheard_output() {
        let tr = transcript(
            AntennaConfig::siso(),
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            3,
            NoiseSpec::Noiseless,
        );
        let sys = eliminate_known_interference(&tr, User::A);
        let h3 = &tr.channel.slots[2];
        let p1 = tr.slots[2].amplitude(Node::TxA);
        let p2 = tr.slots[2].amplitude(Node::TxB);
        let y_a3 = tr.slots[2].output.y_a[0];
        let y_a2 = tr.slots[1].output.y_a[0];
        let expected = (y_a3 - h3.ab[(0, 0)] * p2 * y_a2) / (h3.aa[(0, 0)] * p1);
        let got = sys.rhs[recovered_row(&sys)];
        assert!((got - expected).norm() < 1e-10);
        assert!((got - tr.slots[0].output.y_b[0]).norm() < 1e-10);
    }

    #[test]
    fn siso_output_recovers_overheard_output() {
        let tr = transcript(
            AntennaConfig::siso(),
            FeedbackMode::everywhere(FeedbackKind::DelayedOutput),
            4,
            NoiseSpec::Noiseless,
        );
        let sys = eliminate_known_interference(&tr, User::A);
        let h3 = &tr.channel.slots[2];
        let p1 = tr.slots[2].amplitude(Node::TxA);
        let p2 = tr.slots[2].amplitude(Node::TxB);
        let y_a3 = tr.slots[2].output.y_a[0];
        let y_a2 = tr.slots[1].output.y_a[0];
        let expected = (y_a3 - h3.aa[(0, 0)] * p1 * y_a2) / (h3.ab[(0, 0)] * p2);
        assert!((sys.rhs[recovered_row(&sys)] - expected).norm() < 1e-10);
    }

    #[test]
    fn siso_decodes_two_symbols() {
        for kind in [
            FeedbackKind::DelayedCsit,
            FeedbackKind::DelayedOutput,
            FeedbackKind::DelayedShannon,
        ] {
            let tr = transcript(
                AntennaConfig::siso(),
                FeedbackMode::everywhere(kind),
                8,
                NoiseSpec::Noiseless,
            );
            for user in [User::A, User::B] {
                let sys = eliminate_known_interference(&tr, user);
                assert_eq!(sys.rows(), 2);
                let rep = decode(&sys, Some(tr.symbols.of(user)));
                assert!(rep.decodable);
                assert_eq!(rep.rank.numeric_rank, 2);
                assert!(rep.max_symbol_error.unwrap() < 1e-8);
                assert!(rep.cancellation_residual < 1e-10);
            }
        }
    }

    #[test]
    fn condition_two_collects_six_equations() {
        let config = AntennaConfig::new(1, 2, 2).unwrap();
        let tr = transcript(
            config,
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            11,
            NoiseSpec::Noiseless,
        );
        assert_eq!(tr.plan.frame_length, 5);
        for user in [User::A, User::B] {
            let sys = eliminate_known_interference(&tr, user);
            let rep = decode(&sys, Some(tr.symbols.of(user)));
            assert_eq!((rep.rank.numeric_rank, sys.columns()), (6, 6));
            assert!(rep.max_symbol_error.unwrap() < 1e-8);
        }
    }

    #[test]
    fn zero_symbols_give_zero_rhs() {
        let plan = build_scheme(
            AntennaConfig::siso(),
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
        );
        let mut rng = seeded_rng(1);
        let channel = sample_channel(plan.config, 3, &mut rng).unwrap();
        let tr = run_scheme(&plan, &channel, &UserSymbols::zeros(2), &NoiseSpec::Noiseless, &mut rng).unwrap();
        let sys = eliminate_known_interference(&tr, User::B);
        assert!(sys.rhs.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn duplicated_rows_are_not_decodable() {
        let tr = transcript(
            AntennaConfig::siso(),
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            2,
            NoiseSpec::Noiseless,
        );
        let mut sys = eliminate_known_interference(&tr, User::A);
        let first = sys.matrix.row(0).into_owned();
        sys.matrix.row_mut(1).copy_from(&first);
        let rep = decode(&sys, None);
        assert!(!rep.decodable);
        assert_eq!(rep.rank.numeric_rank, 1);
        assert!(rep.condition_number.is_infinite());
    }

    #[test]
    fn streams_per_frame_matches_plans() {
        let cases = [
            (AntennaConfig::siso(), Ratio::new(2, 3)),
            (AntennaConfig::new(1, 2, 2).unwrap(), Ratio::new(6, 5)),
            (AntennaConfig::new(1, 4, 2).unwrap(), Ratio::new(4, 3)),
        ];
        for (config, d) in cases {
            let tr = transcript(
                config,
                FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
                5,
                NoiseSpec::Noiseless,
            );
            let a = decode(&eliminate_known_interference(&tr, User::A), None);
            let b = decode(&eliminate_known_interference(&tr, User::B), None);
            assert_eq!(streams_per_frame(&a, &b, &tr.plan), Some((d, d)));
        }
    }

    #[test]
    fn information_grows_with_snr() {
        let low = transcript(
            AntennaConfig::siso(),
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            7,
            NoiseSpec::Awgn { snr_db: 10.0 },
        );
        let high = transcript(
            AntennaConfig::siso(),
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            7,
            NoiseSpec::Awgn { snr_db: 40.0 },
        );
        let r_low = desired_information(&eliminate_known_interference(&low, User::A)).unwrap();
        let r_high = desired_information(&eliminate_known_interference(&high, User::A)).unwrap();
        assert!(r_high > r_low + 10.0, "{r_low} {r_high}");
        assert!(desired_information(&eliminate_known_interference(
            &transcript(
                AntennaConfig::siso(),
                FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
                7,
                NoiseSpec::Noiseless
            ),
            User::A
        ))
        .is_none());
    }
    #[test]
    fn every_plan_decodes_on_a_small_grid() {
        let modes = [
            FeedbackMode::everywhere(FeedbackKind::DelayedCsit),
            FeedbackMode::everywhere(FeedbackKind::DelayedOutput),
            FeedbackMode::everywhere(FeedbackKind::DelayedShannon),
            FeedbackMode::new(FeedbackKind::DelayedCsit, false).unwrap(),
            FeedbackMode::new(FeedbackKind::DelayedOutput, false).unwrap(),
            FeedbackMode::everywhere(FeedbackKind::NoFeedback),
        ];
        for m_t in 1..=3 {
            for m_c in 1..=3 {
                for m_r in 1..=5 {
                    let config = AntennaConfig::new(m_t, m_c, m_r).unwrap();
                    for mode in modes {
                        let tr = transcript(config, mode, 31, NoiseSpec::Noiseless);
                        for user in [User::A, User::B] {
                            let sys = eliminate_known_interference(&tr, user);
                            let rep = decode(&sys, Some(tr.symbols.of(user)));
                            assert!(
                                rep.decodable && !rep.degenerate,
                                "{config} {} {user}: rank {} of {}",
                                mode.label(),
                                rep.rank.numeric_rank,
                                sys.columns()
                            );
                            assert!(rep.max_symbol_error.unwrap() < 1e-6, "{config} {} {user}", mode.label());
                            assert!(
                                rep.cancellation_residual < 1e-9,
                                "{config} {} {user}: {}",
                                mode.label(),
                                rep.cancellation_residual
                            );
                        }
                    }
                }
            }
        }
    }
}
