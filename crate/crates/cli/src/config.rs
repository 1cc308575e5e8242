use densedet_core::dataio::SubsetSpec;
use densedet_core::metrics::EvalParams;
use densedet_core::trainkit::TrainConfig;
use densedet_core::Error;
use serde_json::{Map, Value};

/// One JSON file for every subcommand. Training keys sit at the top level,
/// subset extraction under `"subset"` and evaluation under `"metrics"`.
/// Every key is optional and unknown keys are rejected at any depth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub subset: SubsetSpec,
    pub metrics: EvalParams,
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn section<T: serde::de::DeserializeOwned + Default>(value: Option<Value>, prefix: &str) -> Result<T, Error> {
    let Some(value) = value else {
        return Ok(T::default());
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix, inner.as_str()) {
            ("", p) => p.to_string(),
            (pre, ".") => pre.to_string(),
            (pre, p) => format!("{pre}.{p}"),
        };
        schema(&path, e.into_inner().to_string())
    })
}

impl CliConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: line_col_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let Value::Object(mut map) = value else {
            return Err(schema(".", "configuration must be a JSON object"));
        };
        let subset = section(map.remove("subset"), "subset")?;
        let metrics = section(map.remove("metrics"), "metrics")?;
        let train: TrainConfig = section(Some(Value::Object(map)), "")?;
        train.validate()?;
        Ok(CliConfig { train, subset, metrics })
    }

    pub fn to_json(&self) -> String {
        let mut map = match serde_json::to_value(&self.train) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        map.insert("subset".into(), serde_json::to_value(&self.subset).unwrap_or_default());
        map.insert("metrics".into(), serde_json::to_value(&self.metrics).unwrap_or_default());
        serde_json::to_string_pretty(&Value::Object(map)).unwrap_or_default()
    }
}

fn line_col_offset(text: &str, line: usize, col: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    before + col.saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        assert_eq!(CliConfig::from_json("{}").unwrap(), CliConfig::default());
    }

    #[test]
    fn sections_and_top_level_keys() {
        let c = CliConfig::from_json(
            r#"{"epochs": 3, "seed": 9, "subset": {"min_instances": 2}, "metrics": {"max_dets": 10}}"#,
        )
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.subset.min_instances, 2);
        assert_eq!(c.subset.category_name, "person");
        assert_eq!(c.metrics.max_dets, 10);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        for (text, path) in [
            (r#"{"epoch": 3}"#, "epoch"),
            (r#"{"subset": {"category": "dog"}}"#, "subset.category"),
            (r#"{"anchors": {"base_size": 4, "scale": [1]}}"#, "anchors.scale"),
            (r#"{"metrics": {"max_dets": -1}}"#, "metrics.max_dets"),
        ] {
            match CliConfig::from_json(text).unwrap_err() {
                Error::Schema { path: p, message } => assert_eq!(p, path, "{text}: {message}"),
                e => panic!("{text}: {e}"),
            }
        }
    }

    #[test]
    fn invalid_values_and_syntax() {
        assert!(matches!(CliConfig::from_json(r#"{"epochs": 0}"#), Err(Error::InvalidArgument(_))));
        assert!(matches!(CliConfig::from_json("{\n  \"epochs\": }"), Err(Error::Parse { .. })));
        assert!(matches!(CliConfig::from_json("[1]"), Err(Error::Schema { .. })));
    }

    #[test]
    fn round_trip() {
        let mut c = CliConfig::default();
        c.train.epochs = 7;
        c.subset.max_images = Some(4);
        assert_eq!(CliConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
