use std::io::Write;

use serde_json::{Map, Value};

use super::{export_dxf, LayerDocument, MeasureError};

pub const SCHEMA_VERSION: &str = "measure/1";

/// JSON schema of the layer interchange document.
pub const LAYER_SCHEMA: &str = include_str!("../../schema/layer.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerFormat {
    Json,
    Dxf,
}

impl std::str::FromStr for LayerFormat {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(LayerFormat::Json),
            "dxf" => Ok(LayerFormat::Dxf),
            other => Err(MeasureError::UnsupportedFormat(format!(
                "layer format {other:?}"
            ))),
        }
    }
}

pub fn export_layer(doc: &LayerDocument, format: LayerFormat) -> Vec<u8> {
    match format {
        LayerFormat::Json => {
            let mut value = serde_json::to_value(doc).expect("layer documents serialize");
            value
                .as_object_mut()
                .expect("layer is an object")
                .insert("schema".into(), Value::String(SCHEMA_VERSION.into()));
            let mut out = to_canonical_json(&value);
            out.push(b'\n');
            out
        }
        LayerFormat::Dxf => export_dxf(doc),
    }
}

pub fn import_layer(bytes: &[u8], format: LayerFormat) -> Result<LayerDocument, MeasureError> {
    if format == LayerFormat::Dxf {
        return Err(MeasureError::UnsupportedFormat(
            "DXF export is one-way; import a JSON layer instead".into(),
        ));
    }
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| MeasureError::ValidationFailed(format!("malformed JSON: {e}")))?;
    let Value::Object(mut obj) = value else {
        return Err(MeasureError::ValidationFailed(
            "layer document must be a JSON object".into(),
        ));
    };
    match obj.remove("schema") {
        Some(Value::String(s)) if s == SCHEMA_VERSION => {}
        Some(Value::String(s)) => return Err(MeasureError::SchemaVersionUnsupported(s)),
        Some(other) => return Err(MeasureError::SchemaVersionUnsupported(other.to_string())),
        None => {
            return Err(MeasureError::SchemaVersionUnsupported(
                "missing schema field".into(),
            ))
        }
    }
    let doc: LayerDocument = serde_json::from_value(Value::Object(obj))
        .map_err(|e| MeasureError::ValidationFailed(e.to_string()))?;
    doc.validate()?;
    Ok(doc)
}

/// Compact JSON with object keys sorted bytewise at every level and numbers
/// in shortest round-trip form.
pub fn to_canonical_json(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(value, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn write_canonical<W: Write>(value: &Value, out: &mut W) -> std::io::Result<()> {
    match value {
        Value::Array(items) => {
            out.write_all(b"[")?;
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.write_all(b",")?;
                }
                write_canonical(v, out)?;
            }
            out.write_all(b"]")
        }
        Value::Object(map) => write_object(map, out),
        scalar => serde_json::to_writer(&mut *out, scalar).map_err(std::io::Error::from),
    }
}

fn write_object<W: Write>(map: &Map<String, Value>, out: &mut W) -> std::io::Result<()> {
    let mut keys: Vec<&String> = map.keys().collect();
    keys.sort();
    out.write_all(b"{")?;
    for (i, k) in keys.into_iter().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        serde_json::to_writer(&mut *out, k).map_err(std::io::Error::from)?;
        out.write_all(b":")?;
        write_canonical(&map[k], out)?;
    }
    out.write_all(b"}")
}
