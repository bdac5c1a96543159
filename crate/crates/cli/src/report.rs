//! City-level report composed from the other stages' artifacts. Every
//! number is copied from exactly one upstream file, named in `sources`.

use std::collections::BTreeMap;

use databias::attribution::{CityAttribution, FeatureImportance};
use databias::model::Hyperparameters;
use databias::networks::GroupCorrelation;
use serde::{Deserialize, Serialize};

use crate::config::ALL_CITIES;
use crate::stages::{read_json, stage_metadata, upstream, write_json, Ctx, GeneralizationArtifact, InequalityArtifact, ModelArtifact, NetworkSummary};
use crate::CliError;

/// The JSON schema `report.json` conforms to.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityReport {
    pub city: String,
    pub seed: u64,
    /// Section name to the artifact it was copied from, relative to
    /// `output_dir`.
    pub sources: BTreeMap<String, String>,
    pub inequality: InequalitySection,
    pub networks: NetworkSection,
    pub model: ModelSection,
    /// Present when two or more cities are configured.
    pub generalization: Option<GeneralizationArtifact>,
    pub shap: ShapSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalitySection {
    pub gini: f64,
    pub top_20_share: f64,
    pub users: usize,
    pub total_pings: u64,
    pub income_gini: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub all_weight: u64,
    pub backbone_weight: u64,
    pub correlations: Vec<GroupCorrelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub features: Vec<String>,
    pub mean_r2: f64,
    pub std_r2: f64,
    pub outer_scores: Vec<f64>,
    pub final_hyperparameters: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSection {
    pub base: f64,
    pub median_target: f64,
    pub top_features: Vec<FeatureImportance>,
}

fn source(city: &str, stage: &str, file: &str) -> String {
    format!("{city}/{stage}/{file}")
}

/// Writes `{city}/report/report.json` for every configured city.
pub fn report(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.loaded.config;
    let out = ctx.loaded.output_dir();
    let generalization = if cfg.cities.len() >= 2 {
        let rel = source(ALL_CITIES, "model", "generalization.json");
        Some((read_json::<GeneralizationArtifact>(&upstream(out.join(&rel), "model")?)?, rel))
    } else {
        None
    };
    for city in cfg.cities.keys() {
        let mut sources = BTreeMap::new();
        let mut load = |section: &str, stage: &str, producer: &str, file: &str| {
            let rel = source(city, stage, file);
            sources.insert(section.to_string(), rel.clone());
            upstream(out.join(rel), producer)
        };
        let ineq: InequalityArtifact = read_json(&load("inequality", "audit", "audit", "inequality.json")?)?;
        let nets: NetworkSummary = read_json(&load("networks", "networks", "networks", "summary.json")?)?;
        let model: ModelArtifact = read_json(&load("model", "model", "model", "cv.json")?)?;
        let shap: CityAttribution = read_json(&load("shap", "shap", "shap", "shap.json")?)?;
        if let Some((_, rel)) = &generalization {
            sources.insert("generalization".into(), rel.clone());
        }
        let report = CityReport {
            city: city.clone(),
            seed: cfg.seed,
            sources,
            inequality: InequalitySection {
                gini: ineq.report.gini,
                top_20_share: ineq.report.top_20_share,
                users: ineq.report.users,
                total_pings: ineq.report.total_pings,
                income_gini: ineq.income_gini,
            },
            networks: NetworkSection {
                all_weight: nets.all_weight,
                backbone_weight: nets.backbone_weight,
                correlations: nets.correlations,
            },
            model: ModelSection {
                features: model.features,
                mean_r2: model.report.mean_r2,
                std_r2: model.report.std_r2,
                outer_scores: model.report.outer_scores,
                final_hyperparameters: model.report.final_hyperparameters,
            },
            generalization: generalization.as_ref().map(|(g, _)| g.clone()),
            shap: ShapSection {
                base: shap.base,
                median_target: shap.median_target,
                top_features: shap.importance.into_iter().take(cfg.model.top_features).collect(),
            },
        };
        write_json(&ctx.loaded.stage_dir(city, "report").join("report.json"), &report)?;
        stage_metadata(ctx, city, "report")?;
    }
    Ok(())
}
