//! Perplexity-based detection of AI-generated homework answers.
//!
//! * [`scorer`] - tokenization and window scoring backends (n-gram, remote)
//! * [`engine`] - sliding-window perplexity
//! * [`corpus`] - labeled corpus, taxonomy metadata, flavors, splitting
//! * [`calibration`] - single-point ROC/AUC and F1 threshold search
//! * [`evaluation`] - per-category accuracy against global baselines
//! * [`pipeline`] - offline scoring, calibration and evaluation run

/// Closed string enumeration with serde names, `Display` and `FromStr`.
macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, ::serde::Serialize, ::serde::Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!(
                        concat!("unknown ", stringify!($name), " {:?}; expected one of {}"),
                        s,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

pub mod calibration;
pub mod corpus;
pub mod engine;
pub mod evaluation;
pub mod hashing;
pub mod pipeline;
pub mod scorer;
pub mod tokenize;

pub use calibration::{
    auc_single_point, classify, confusion, f1_score, optimal_threshold, Category, ConfusionCounts,
    Grid, ThresholdMethod, ThresholdTable,
};
pub use corpus::{Corpus, DatasetFlavor, Source};
pub use engine::{compute_perplexity, schedule_windows, EngineConfig, PerplexityReport, WindowScore};
pub use scorer::{Scorer, ScorerDescriptor, ScorerSpec, TokenSequence};
