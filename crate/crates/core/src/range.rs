//! Hard and soft range classification of single observations.
//!
//! The soft range shrinks the laboratory reference range by a fixed fraction
//! of its width at each end, so borderline-normal results fall outside it.

use serde::{Deserialize, Serialize};

use crate::cohort::{PathologyObservation, ReferenceRange};

pub const DEFAULT_SOFT_MARGIN: f64 = 0.025;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HardStatus {
    Below,
    InRange,
    Above,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SoftStatus {
    OutSoftLow,
    InSoft,
    OutSoftHigh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RangeStatus {
    pub hard: HardStatus,
    pub soft: SoftStatus,
}

impl RangeStatus {
    pub fn hard_out(&self) -> bool {
        self.hard != HardStatus::InRange
    }

    pub fn soft_out(&self) -> bool {
        self.soft != SoftStatus::InSoft
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftBounds {
    pub margin: f64,
    pub low: f64,
    pub high: f64,
}

/// Soft bounds for `range` using `margin_fraction` of the width at each end.
///
/// `margin_fraction` must lie in `[0, 0.5)` for the result to stay ordered.
pub fn soft_bounds(range: &ReferenceRange, margin_fraction: f64) -> SoftBounds {
    let margin = margin_fraction * range.width();
    SoftBounds {
        margin,
        low: range.low() + margin,
        high: range.high() - margin,
    }
}

/// Both interval tests are closed at each end.
pub fn classify_value(value: f64, range: &ReferenceRange, margin_fraction: f64) -> RangeStatus {
    let hard = if value < range.low() {
        HardStatus::Below
    } else if value > range.high() {
        HardStatus::Above
    } else {
        HardStatus::InRange
    };
    let soft_range = soft_bounds(range, margin_fraction);
    let soft = match hard {
        HardStatus::Below => SoftStatus::OutSoftLow,
        HardStatus::Above => SoftStatus::OutSoftHigh,
        HardStatus::InRange if value < soft_range.low => SoftStatus::OutSoftLow,
        HardStatus::InRange if value > soft_range.high => SoftStatus::OutSoftHigh,
        HardStatus::InRange => SoftStatus::InSoft,
    };
    RangeStatus { hard, soft }
}

pub fn classify(obs: &PathologyObservation, margin_fraction: f64) -> RangeStatus {
    classify_value(obs.value, &obs.range, margin_fraction)
}
