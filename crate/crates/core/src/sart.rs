//! SART self-rating: ten 7-point constructs grouped into demand (D),
//! supply (S) and understanding (U); total = U − (D − S).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONSTRUCTS: [&str; 10] = [
    "instability",
    "complexity",
    "variability",
    "arousal",
    "concentration",
    "division_of_attention",
    "spare_capacity",
    "information_quantity",
    "information_quality",
    "familiarity",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SartError {
    #[error("expected 10 ratings, got {0}")]
    WrongCount(usize),
    #[error("rating {value} for {construct} is outside 1..7")]
    OutOfRange { construct: &'static str, value: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SartScore {
    pub ratings: [u8; 10],
    pub d: i32,
    pub s: i32,
    pub u: i32,
    pub total: i32,
    /// Plain mean of the ten ratings, reported alongside the total.
    pub mean_rating: f64,
}

pub fn score_sart(ratings: &[i64]) -> Result<SartScore, SartError> {
    if ratings.len() != 10 {
        return Err(SartError::WrongCount(ratings.len()));
    }
    let mut r = [0u8; 10];
    for (i, &v) in ratings.iter().enumerate() {
        if !(1..=7).contains(&v) {
            return Err(SartError::OutOfRange { construct: CONSTRUCTS[i], value: v });
        }
        r[i] = v as u8;
    }
    let sum = |range: std::ops::Range<usize>| r[range].iter().map(|&x| i32::from(x)).sum::<i32>();
    let (d, s, u) = (sum(0..3), sum(3..7), sum(7..10));
    Ok(SartScore {
        ratings: r,
        d,
        s,
        u,
        total: u - (d - s),
        mean_rating: r.iter().map(|&x| f64::from(x)).sum::<f64>() / 10.0,
    })
}
