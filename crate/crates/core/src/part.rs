//! The closed set of facial part labels and their file codes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, Error};

/// Semantic face part. The discriminant is the code used in label-map files;
/// code 0 is background and has no variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PartLabel {
    LeftEye = 1,
    RightEye = 2,
    LeftEyebrow = 3,
    RightEyebrow = 4,
    UpLip = 5,
    DownLip = 6,
    Nose = 7,
    Skin = 8,
}

impl PartLabel {
    pub const ALL: [PartLabel; 8] = [
        PartLabel::LeftEye,
        PartLabel::RightEye,
        PartLabel::LeftEyebrow,
        PartLabel::RightEyebrow,
        PartLabel::UpLip,
        PartLabel::DownLip,
        PartLabel::Nose,
        PartLabel::Skin,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<PartLabel> {
        match code {
            1..=8 => Some(Self::ALL[code as usize - 1]),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartLabel::LeftEye => "left_eye",
            PartLabel::RightEye => "right_eye",
            PartLabel::LeftEyebrow => "left_eyebrow",
            PartLabel::RightEyebrow => "right_eyebrow",
            PartLabel::UpLip => "up_lip",
            PartLabel::DownLip => "down_lip",
            PartLabel::Nose => "nose",
            PartLabel::Skin => "skin",
        }
    }

    pub fn is_eyebrow(self) -> bool {
        matches!(self, PartLabel::LeftEyebrow | PartLabel::RightEyebrow)
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PartLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(code) = s.parse::<u8>() {
            return PartLabel::from_code(code).ok_or_else(|| format_err(format!("unknown part code {code}")));
        }
        PartLabel::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| format_err(format!("unknown part name '{s}'")))
    }
}
