//! Request-independent detection logic behind the HTTP handlers.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use ppldetect_core::calibration::{classify, Dimension};
use ppldetect_core::engine::{compute_perplexity, EngineConfig, WindowScore};
use ppldetect_core::{Category, DatasetFlavor, Scorer, Source, ThresholdMethod, ThresholdTable};

use crate::error::ServiceError;

/// Largest accepted submission, in bytes of UTF-8 text.
pub const MAX_TEXT_BYTES: usize = 64 * 1024;

/// One category name, or several for multi-label cognitive requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CategorySelection {
    One(String),
    Many(Vec<String>),
}

impl CategorySelection {
    fn names(&self) -> Vec<&str> {
        match self {
            CategorySelection::One(n) => vec![n.as_str()],
            CategorySelection::Many(ns) => ns.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeRequest {
    pub text: String,
    #[serde(default)]
    pub flavor: Option<DatasetFlavor>,
    #[serde(default)]
    pub method: Option<ThresholdMethod>,
    #[serde(default)]
    pub dimension: Option<Dimension>,
    #[serde(default)]
    pub category: Option<CategorySelection>,
}

impl AnalyzeRequest {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

/// The table cell (or cells, averaged) a verdict was judged against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdKey {
    pub flavor: DatasetFlavor,
    pub method: ThresholdMethod,
    pub dimension: Dimension,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<CategorySelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub origin: Source,
    pub perplexity: f64,
    pub threshold: f64,
    pub threshold_key: ThresholdKey,
    /// `perplexity - threshold`; negative exactly when the origin is ai.
    pub margin: f64,
    pub scorer: String,
    pub token_count: usize,
    pub windows: Vec<WindowScore>,
}

/// Scorer handle, engine settings and the current threshold table.
///
/// The table sits behind an `Arc` so a reload swaps the pointer while
/// in-flight requests keep the table they started with.
pub struct Detector {
    scorer: Arc<dyn Scorer>,
    engine: EngineConfig,
    table: RwLock<Option<Arc<ThresholdTable>>>,
}

impl Detector {
    pub fn new(scorer: Arc<dyn Scorer>, engine: EngineConfig) -> Result<Self, ServiceError> {
        engine
            .validate_for(&scorer.descriptor())
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(Self {
            scorer,
            engine,
            table: RwLock::new(None),
        })
    }

    pub fn scorer(&self) -> &Arc<dyn Scorer> {
        &self.scorer
    }

    pub fn scorer_name(&self) -> String {
        self.scorer.descriptor().name
    }

    pub fn engine(&self) -> &EngineConfig {
        &self.engine
    }

    pub fn table(&self) -> Option<Arc<ThresholdTable>> {
        self.table.read().expect("table lock poisoned").clone()
    }

    /// Validates and installs `table`, replacing any previous one.
    pub fn install(&self, table: ThresholdTable) -> Result<usize, ServiceError> {
        table.validate().map_err(|e| ServiceError::Reload(e.to_string()))?;
        let n = table.entries.len();
        *self.table.write().expect("table lock poisoned") = Some(Arc::new(table));
        Ok(n)
    }

    /// Loads a table file; on any error the current table stays in place.
    pub fn reload(&self, path: &Path) -> Result<usize, ServiceError> {
        let table = ThresholdTable::load(path).map_err(|e| ServiceError::Reload(e.to_string()))?;
        self.install(table)
    }

    pub fn analyze(&self, request: &AnalyzeRequest) -> Result<Verdict, ServiceError> {
        if request.text.len() > MAX_TEXT_BYTES {
            return Err(ServiceError::TooLarge {
                bytes: request.text.len(),
                max: MAX_TEXT_BYTES,
            });
        }
        let table = self.table().ok_or(ServiceError::NoTable)?;
        let (threshold_key, threshold) = resolve_threshold(&table, request)?;
        let report = compute_perplexity(&request.text, self.scorer.as_ref(), &self.engine)?;
        let origin = classify(report.perplexity, threshold).map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(Verdict {
            origin,
            perplexity: report.perplexity,
            threshold,
            threshold_key,
            margin: report.perplexity - threshold,
            scorer: report.scorer_name,
            token_count: report.token_count,
            windows: report.windows,
        })
    }
}

/// Finds the threshold a request asks for. Several cognitive categories
/// resolve to the mean of their thresholds.
pub fn resolve_threshold(table: &ThresholdTable, request: &AnalyzeRequest) -> Result<(ThresholdKey, f64), ServiceError> {
    let flavor = request.flavor.unwrap_or(DatasetFlavor::Orig);
    let method = request.method.unwrap_or(ThresholdMethod::Auc);
    let dimension = match (request.dimension, &request.category) {
        (None, Some(_)) => return Err(ServiceError::BadRequest("category given without dimension".into())),
        (None, None) => Dimension::Global,
        (Some(d), _) => d,
    };

    let categories: Vec<Category> = match (dimension, &request.category) {
        (Dimension::Global, None) => vec![Category::Global],
        (Dimension::Global, Some(_)) => {
            return Err(ServiceError::BadRequest("the global dimension takes no category".into()))
        }
        (d, None) => return Err(ServiceError::BadRequest(format!("dimension {d} needs a category"))),
        (d, Some(sel)) => {
            let names = sel.names();
            if names.is_empty() {
                return Err(ServiceError::BadRequest("empty category list".into()));
            }
            let unique: BTreeSet<&str> = names.iter().copied().collect();
            if d == Dimension::Knowledge && unique.len() > 1 {
                return Err(ServiceError::BadRequest("a question has exactly one knowledge category".into()));
            }
            unique
                .into_iter()
                .map(|n| Category::parse(d, Some(n)).map_err(ServiceError::BadRequest))
                .collect::<Result<_, _>>()?
        }
    };

    let mut sum = 0.0;
    for &category in &categories {
        sum += table.threshold(flavor, method, category).ok_or_else(|| {
            ServiceError::UnknownKey(format!("({flavor}, {method}, {category})"))
        })?;
    }
    let threshold = if categories.len() == 1 {
        sum
    } else {
        sum / categories.len() as f64
    };
    let key = ThresholdKey {
        flavor,
        method,
        dimension,
        category: request.category.clone(),
    };
    Ok((key, threshold))
}
