//! Exact DoF regions as 2-D polytopes over (d_a, d_b).
//!
//! Everything here is rational; halfspaces are stored with coprime integer
//! coefficients so that structurally equal regions compare equal.

use std::cmp::Ordering;
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::channel_model::{classify_condition, AntennaConfig, Condition};

pub type Rational = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegionError {
    #[error("region does not contain the origin")]
    Empty,
    #[error("region is unbounded")]
    Unbounded,
    #[error("halfspace with zero normal")]
    ZeroNormal,
    #[error("the cognitive transmitter needs more antennas than the other ({m_cog} <= {m_t})")]
    CognitiveTooSmall { m_t: usize, m_cog: usize },
    #[error("the interference channel column needs an even relay antenna count (got {0})")]
    OddRelay(usize),
}

fn q(n: usize) -> Rational {
    Rational::from_integer(n as i64)
}

/// `alpha * d_a + beta * d_b <= gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Halfspace {
    pub alpha: Rational,
    pub beta: Rational,
    pub gamma: Rational,
}

impl Halfspace {
    pub fn new(alpha: Rational, beta: Rational, gamma: Rational) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn ints(alpha: i64, beta: i64, gamma: i64) -> Self {
        Self::new(alpha.into(), beta.into(), gamma.into()).normalized()
    }

    /// Scaled to coprime integers, keeping the direction of the inequality.
    pub fn normalized(self) -> Self {
        let denoms = [self.alpha.denom(), self.beta.denom(), self.gamma.denom()];
        let lcm = denoms.iter().fold(1i64, |acc, &d| acc.lcm(d));
        let ints = [self.alpha, self.beta, self.gamma].map(|x| (x * lcm).to_integer());
        let g = ints.iter().fold(0i64, |acc, &v| acc.gcd(&v));
        if g == 0 {
            return self;
        }
        let [a, b, c] = ints.map(|v| Rational::from_integer(v / g));
        Self::new(a, b, c)
    }

    pub fn holds(&self, p: (Rational, Rational)) -> bool {
        self.alpha * p.0 + self.beta * p.1 <= self.gamma
    }
}

impl fmt::Display for Halfspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*d_a + {}*d_b <= {}", self.alpha, self.beta, self.gamma)
    }
}

/// Bounded polygon in the nonnegative quadrant; `d_a, d_b >= 0` is implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalPolytope2D {
    halfspaces: Vec<Halfspace>,
    vertices: Vec<(Rational, Rational)>,
}

impl RationalPolytope2D {
    pub fn new(halfspaces: Vec<Halfspace>) -> Result<Self, RegionError> {
        let mut hs: Vec<Halfspace> = Vec::new();
        for h in halfspaces {
            if h.alpha.is_zero() && h.beta.is_zero() {
                if h.gamma.is_negative() {
                    return Err(RegionError::Empty);
                }
                continue;
            }
            let h = h.normalized();
            if !hs.contains(&h) {
                hs.push(h);
            }
        }
        if hs.iter().any(|h| h.gamma.is_negative()) {
            return Err(RegionError::Empty);
        }
        if !bounded(&hs) {
            return Err(RegionError::Unbounded);
        }
        let vertices = enumerate_vertices(&hs);
        Ok(Self {
            halfspaces: hs,
            vertices,
        })
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    /// Counter-clockwise from the origin.
    pub fn vertices(&self) -> &[(Rational, Rational)] {
        &self.vertices
    }

    pub fn contains_point(&self, p: (Rational, Rational)) -> bool {
        !p.0.is_negative() && !p.1.is_negative() && self.halfspaces.iter().all(|h| h.holds(p))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "halfspaces": self
                .halfspaces
                .iter()
                .map(|h| [h.alpha.to_string(), h.beta.to_string(), h.gamma.to_string()])
                .collect::<Vec<_>>(),
            "vertices": self
                .vertices
                .iter()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect::<Vec<_>>(),
            "vertices_float": self
                .vertices
                .iter()
                .map(|(a, b)| [to_f64(*a), to_f64(*b)])
                .collect::<Vec<_>>(),
        })
    }
}

pub fn to_f64(x: Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// The recession cone of a polygon in the quadrant is spanned by rays on
/// the axes or on constraint lines, so testing those candidates suffices.
fn bounded(hs: &[Halfspace]) -> bool {
    let zero = Rational::zero();
    let mut rays = vec![(Rational::from(1), zero), (zero, Rational::from(1))];
    for h in hs {
        if h.alpha.is_positive() != h.beta.is_positive() && !h.alpha.is_zero() && !h.beta.is_zero() {
            rays.push((h.beta.abs(), h.alpha.abs()));
        }
    }
    !rays
        .iter()
        .any(|r| hs.iter().all(|h| h.alpha * r.0 + h.beta * r.1 <= zero))
}

fn enumerate_vertices(hs: &[Halfspace]) -> Vec<(Rational, Rational)> {
    let zero = Rational::zero();
    let one = Rational::from(1);
    let mut lines: Vec<(Rational, Rational, Rational)> = hs.iter().map(|h| (h.alpha, h.beta, h.gamma)).collect();
    lines.push((one, zero, zero));
    lines.push((zero, one, zero));
    let feasible = |p: (Rational, Rational)| !p.0.is_negative() && !p.1.is_negative() && hs.iter().all(|h| h.holds(p));
    let mut points: Vec<(Rational, Rational)> = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let (a1, b1, c1) = lines[i];
            let (a2, b2, c2) = lines[j];
            let det = a1 * b2 - a2 * b1;
            if det.is_zero() {
                continue;
            }
            let p = ((c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det);
            if feasible(p) && !points.contains(&p) {
                points.push(p);
            }
        }
    }
    // Every point is in the quadrant, so the cross product against the
    // origin orders them by angle.
    points.sort_by(|p, q| {
        let norm = |v: &(Rational, Rational)| v.0 + v.1;
        match (p.0.is_zero() && p.1.is_zero(), q.0.is_zero() && q.1.is_zero()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            _ => {
                let cross = p.0 * q.1 - p.1 * q.0;
                match cross.cmp(&zero) {
                    Ordering::Greater => Ordering::Less,
                    Ordering::Less => Ordering::Greater,
                    Ordering::Equal => norm(p).cmp(&norm(q)),
                }
            }
        }
    });
    points
}

/// Maximum of `w_a * d_a + w_b * d_b` over the region.
pub fn max_weighted(poly: &RationalPolytope2D, w_a: Rational, w_b: Rational) -> Rational {
    poly.vertices
        .iter()
        .map(|&(a, b)| w_a * a + w_b * b)
        .max()
        .unwrap_or_else(Rational::zero)
}

pub fn sum_dof(poly: &RationalPolytope2D) -> Rational {
    max_weighted(poly, 1.into(), 1.into())
}

/// Largest `d` with `(d, d)` in the region.
pub fn symmetric_point(poly: &RationalPolytope2D) -> Rational {
    poly.halfspaces
        .iter()
        .filter(|h| (h.alpha + h.beta).is_positive())
        .map(|h| h.gamma / (h.alpha + h.beta))
        .min()
        .unwrap_or_else(Rational::zero)
}

/// `p ⊆ q`.
pub fn polytope_contains(q_outer: &RationalPolytope2D, p: &RationalPolytope2D) -> bool {
    p.vertices.iter().all(|&v| q_outer.contains_point(v))
}

pub fn polytope_equal(p: &RationalPolytope2D, q: &RationalPolytope2D) -> bool {
    polytope_contains(p, q) && polytope_contains(q, p)
}

fn build(hs: Vec<Halfspace>) -> RationalPolytope2D {
    RationalPolytope2D::new(hs).expect("closed-form regions are bounded and contain the origin")
}

/// DoF region under delayed CSIT.
pub fn region_csi(config: AntennaConfig) -> RationalPolytope2D {
    let AntennaConfig { m_t, m_c, m_r } = config;
    let c1 = m_r.min(m_t + m_c) as i64;
    let c2 = (2 * m_r).min(m_t + m_c) as i64;
    let c3 = m_r.min(2 * m_t + m_c) as i64;
    build(vec![
        Halfspace::ints(1, 0, c1),
        Halfspace::ints(0, 1, c1),
        Halfspace::ints(c2, c1, c3 * c2),
        Halfspace::ints(c1, c2, c3 * c2),
    ])
}

/// DoF region under delayed output feedback; the same polytope as delayed CSIT.
pub fn region_output(config: AntennaConfig) -> RationalPolytope2D {
    region_csi(config)
}

/// DoF region under delayed Shannon feedback; the same polytope as delayed CSIT.
pub fn region_shannon(config: AntennaConfig) -> RationalPolytope2D {
    region_csi(config)
}

/// Outer bound for any of the delayed feedback types, in fractional form.
pub fn region_outer_delayed(config: AntennaConfig) -> RationalPolytope2D {
    let AntennaConfig { m_t, m_c, m_r } = config;
    let single = q(m_r).min(q(m_t + m_c));
    let pair = q(2 * m_r).min(q(m_t + m_c));
    let rhs = q(m_r).min(q(2 * m_t + m_c)) / single;
    let zero = Rational::zero();
    build(vec![
        Halfspace::new(1.into(), zero, single),
        Halfspace::new(zero, 1.into(), single),
        Halfspace::new(single.recip(), pair.recip(), rhs),
        Halfspace::new(pair.recip(), single.recip(), rhs),
    ])
}

/// DoF region without feedback.
pub fn region_no(config: AntennaConfig) -> RationalPolytope2D {
    let AntennaConfig { m_t, m_c, m_r } = config;
    let single = m_r.min(m_t + m_c) as i64;
    let total = m_r.min(2 * m_t + m_c) as i64;
    build(vec![
        Halfspace::ints(1, 0, single),
        Halfspace::ints(0, 1, single),
        Halfspace::ints(1, 1, total),
    ])
}

/// SISO DoF region with perfect CSIT: the unit square.
pub fn region_perfect_siso() -> RationalPolytope2D {
    build(vec![Halfspace::ints(1, 0, 1), Halfspace::ints(0, 1, 1)])
}

/// Halfspaces of the convex hull of the origin, `(cap, 0)`, `(0, cap)` and
/// `(s, s)`.
fn hull_with_symmetric_point(cap: Rational, s: Rational) -> RationalPolytope2D {
    let zero = Rational::zero();
    let mut hs = vec![Halfspace::new(1.into(), zero, cap), Halfspace::new(zero, 1.into(), cap)];
    if s + s <= cap {
        hs.push(Halfspace::new(1.into(), 1.into(), cap));
    } else {
        // Edges (cap, 0)-(s, s) and (0, cap)-(s, s).
        hs.push(Halfspace::new(s, cap - s, cap * s));
        hs.push(Halfspace::new(cap - s, s, cap * s));
    }
    build(hs)
}

/// Achievable region when the relay receives no feedback.
pub fn achievable_region_no_cr_feedback(config: AntennaConfig) -> RationalPolytope2D {
    let AntennaConfig { m_t, m_c, m_r } = config;
    let condition = classify_condition(config);
    let tdm = || {
        let single = m_r.min(m_t + m_c) as i64;
        build(vec![
            Halfspace::ints(1, 0, single),
            Halfspace::ints(0, 1, single),
            Halfspace::ints(1, 1, m_r as i64),
        ])
    };
    match condition {
        Condition::I | Condition::III | Condition::V => region_csi(config),
        _ if 2 * m_t < m_r => tdm(),
        Condition::II => {
            let s = Rational::new(((m_t + m_c) * m_t) as i64, (3 * m_t + m_c - m_r) as i64);
            hull_with_symmetric_point(q(m_r), s)
        }
        Condition::IV => hull_with_symmetric_point(q(m_r), Rational::new((m_t + m_r) as i64, 3)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Table2Regime {
    /// 2M_t + M_c <= M_r
    FullReceive,
    /// M_t + M_c <= M_r < 2M_t + M_c
    JointReceive,
    /// M_t + M_c/2 <= M_r < M_t + M_c
    UpperIntermediate,
    /// (M_t + M_c)/2 <= M_r < M_t + M_c/2
    LowerIntermediate,
    /// M_r < (M_t + M_c)/2
    FewReceive,
}

impl Table2Regime {
    pub fn of(config: AntennaConfig) -> Self {
        let AntennaConfig { m_t, m_c, m_r } = config;
        if 2 * m_t + m_c <= m_r {
            Self::FullReceive
        } else if m_t + m_c <= m_r {
            Self::JointReceive
        } else if 2 * m_t + m_c <= 2 * m_r {
            Self::UpperIntermediate
        } else if m_t + m_c <= 2 * m_r {
            Self::LowerIntermediate
        } else {
            Self::FewReceive
        }
    }

    pub fn row(self) -> usize {
        match self {
            Self::FullReceive => 1,
            Self::JointReceive => 2,
            Self::UpperIntermediate => 3,
            Self::LowerIntermediate => 4,
            Self::FewReceive => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::FullReceive => "2Mt+Mc<=Mr",
            Self::JointReceive => "Mt+Mc<=Mr<2Mt+Mc",
            Self::UpperIntermediate => "Mt+Mc/2<=Mr<Mt+Mc",
            Self::LowerIntermediate => "(Mt+Mc)/2<=Mr<Mt+Mc/2",
            Self::FewReceive => "Mr<(Mt+Mc)/2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumDofRow {
    pub config: AntennaConfig,
    pub regime: Table2Regime,
    pub bc: Rational,
    pub iccr: Rational,
    /// The same quantity from the region's vertices.
    pub iccr_region: Rational,
    /// Absent for odd M_c.
    pub ic: Option<Rational>,
}

impl SumDofRow {
    pub fn to_json(&self) -> Value {
        let r = |x: Rational| json!({"exact": x.to_string(), "value": to_f64(x)});
        json!({
            "config": self.config.to_string(),
            "m_t": self.config.m_t,
            "m_c": self.config.m_c,
            "m_r": self.config.m_r,
            "regime": self.regime.label(),
            "row": self.regime.row(),
            "bc": r(self.bc),
            "iccr": r(self.iccr),
            "iccr_region": r(self.iccr_region),
            "ic": self.ic.map(r),
        })
    }

    pub const CSV_HEADER: [&'static str; 13] = [
        "config",
        "m_t",
        "m_c",
        "m_r",
        "regime",
        "bc",
        "iccr",
        "iccr_region",
        "ic",
        "bc_float",
        "iccr_float",
        "iccr_region_float",
        "ic_float",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.config.to_string(),
            self.config.m_t.to_string(),
            self.config.m_c.to_string(),
            self.config.m_r.to_string(),
            self.regime.label().to_string(),
            self.bc.to_string(),
            self.iccr.to_string(),
            self.iccr_region.to_string(),
            self.ic.map(|x| x.to_string()).unwrap_or_default(),
            to_f64(self.bc).to_string(),
            to_f64(self.iccr).to_string(),
            to_f64(self.iccr_region).to_string(),
            self.ic.map(|x| to_f64(x).to_string()).unwrap_or_default(),
        ]
    }
}

/// `2 N M / (N + M)`.
fn harmonic_pair(n: Rational, m: Rational) -> Rational {
    Rational::from(2) * n * m / (n + m)
}

/// Broadcast channel, ICCR and interference channel sum DoF under delayed
/// CSIT, from the closed forms of each regime.
pub fn sum_dof_comparison(config: AntennaConfig) -> SumDofRow {
    let AntennaConfig { m_t, m_c, m_r } = config;
    let regime = Table2Regime::of(config);
    let full = q(2 * m_t + m_c);
    let joint = q(m_t + m_c);
    let ic_tx = q(m_t) + Rational::new(m_c as i64, 2);
    let r = q(m_r);
    let few = Rational::new(4 * m_r as i64, 3);
    let (bc, iccr, ic) = match regime {
        Table2Regime::FullReceive => (full, full, full),
        Table2Regime::JointReceive => (harmonic_pair(full, r), r, r),
        Table2Regime::UpperIntermediate => (harmonic_pair(full, r), harmonic_pair(joint, r), r),
        Table2Regime::LowerIntermediate => (few, harmonic_pair(joint, r), harmonic_pair(ic_tx, r)),
        Table2Regime::FewReceive => (few, few, few),
    };
    SumDofRow {
        config,
        regime,
        bc,
        iccr,
        iccr_region: sum_dof(&region_csi(config)),
        ic: (m_c % 2 == 0).then_some(ic),
    }
}

/// Lower and upper bounds on the cognitive interference channel region
/// with `m_cog` antennas at the cognitive transmitter.
pub fn cognitive_ic_bounds(
    m_t: usize,
    m_cog: usize,
    m_r: usize,
) -> Result<(RationalPolytope2D, RationalPolytope2D), RegionError> {
    if m_cog <= m_t {
        return Err(RegionError::CognitiveTooSmall { m_t, m_cog });
    }
    let lower = AntennaConfig {
        m_t,
        m_c: m_cog - m_t,
        m_r,
    };
    let upper = AntennaConfig { m_t, m_c: m_cog, m_r };
    Ok((region_csi(lower), region_csi(upper)))
}
