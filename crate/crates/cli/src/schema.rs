use clap::ValueEnum;
use schemars::{schema_for, SchemaGenerator};
use serde_json::Value;
use stakesim::attacks::AttackSpec;
use stakesim::netsim::SimConfig;
use stakesim::ChainParams;

use crate::analytic::AnalyticOpts;
use crate::manifest::RunManifest;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Document {
    /// `--config` of `analytic`.
    Analytic,
    /// `--config` of `simulate` and `modifier-trace`.
    Simulate,
    /// `--config` of `attack`.
    Attack,
    /// `manifest.json` written next to every output.
    Manifest,
}

impl Document {
    pub fn schema(self) -> Value {
        match self {
            Document::Analytic => schema_for!(AnalyticOpts).to_value(),
            Document::Simulate => {
                // `params` falls back to the preset and `seed` comes from `--seed`.
                let mut s = schema_for!(SimConfig).to_value();
                if let Some(Value::Array(required)) = s.get_mut("required") {
                    required.retain(|r| r != "params" && r != "seed");
                }
                s
            }
            Document::Attack => {
                let mut generator = SchemaGenerator::default();
                let params = generator.subschema_for::<ChainParams>().to_value();
                let mut s = generator.into_root_schema_for::<AttackSpec>().to_value();
                if let Some(Value::Object(props)) = s.get_mut("properties") {
                    props.insert("params".into(), params);
                }
                s
            }
            Document::Manifest => schema_for!(RunManifest).to_value(),
        }
    }

    pub fn schema_json(self) -> String {
        serde_json::to_string_pretty(&self.schema()).expect("schema serializes")
    }
}
