//! Trains a list of variants on shared data and tabulates their test
//! errors per stage.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::handmodel::Sample;

use super::config::{AblationVariant, TrainConfig};
use super::eval::{evaluate_state, EvalReport};
use super::model::Stage;
use super::train::{stage1_pretrain, stage2_train_generator, stage3_adversarial, StageOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub stage: Stage,
    pub report: EvalReport,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantFile {
    variant: Vec<AblationVariant>,
}

/// Variants from a TOML document of `[[variant]]` tables.
pub fn parse_variants(text: &str) -> Result<Vec<AblationVariant>> {
    let f: VariantFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if f.variant.is_empty() {
        return Err(Error::Config("no variants".into()));
    }
    Ok(f.variant)
}

pub fn load_variants(path: &Path) -> Result<Vec<AblationVariant>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_variants(&text)
}

/// Rows in variant order, one per stage each variant reaches.
///
/// Stage I trains only the hand model, so its result depends on the loss
/// switches alone; variants that agree on them reuse one Stage I run.
pub fn run_ablation(
    config: &TrainConfig,
    variants: &[AblationVariant],
    train: &[Sample],
    test: &[Sample],
) -> Result<Vec<AblationRow>> {
    let mut stage1: HashMap<(bool, bool), StageOutcome> = HashMap::new();
    let mut rows = Vec::new();
    for v in variants {
        let cfg = config.with_variant(v);
        let key = (v.use_len, v.use_dir);
        if !stage1.contains_key(&key) {
            stage1.insert(key, stage1_pretrain(&cfg, train)?);
        }
        let s1 = &stage1[&key];
        let mut push = |stage, out: &StageOutcome| -> Result<()> {
            rows.push(AblationRow {
                variant: v.name.clone(),
                stage,
                report: evaluate_state(&out.state, test)?,
            });
            Ok(())
        };
        push(Stage::I, s1)?;
        if v.last_stage() >= 2 {
            let s2 = stage2_train_generator(&cfg, &s1.checkpoint(), train)?;
            push(Stage::II, &s2)?;
            if v.last_stage() >= 3 {
                let s3 = stage3_adversarial(&cfg, &s2.checkpoint(), train)?;
                push(Stage::III, &s3)?;
            }
        }
    }
    Ok(rows)
}

/// `variant,stage,mean_error_mm,auc,bone_direction_error` rows with a
/// header.
pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,stage,mean_error_mm,auc,bone_direction_error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.variant, r.stage, r.report.mean_error, r.report.pck.auc, r.report.bone_direction_error
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_variant_tables() {
        let v = parse_variants(
            "[[variant]]\nname = \"full\"\n\n[[variant]]\nname = \"fc\"\nrefinement = \"fc\"\ncritic = \"none\"\n",
        )
        .unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0], AblationVariant::default());
        assert_eq!(v[1].last_stage(), 2);
        assert!(parse_variants("").is_err());
        assert!(parse_variants("[[variant]]\nrefinement = \"mlp\"\n").is_err());
    }
}
