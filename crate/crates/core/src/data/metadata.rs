use super::{header_index, DataError, Manifest};
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// Columns every metadata file must carry.
pub const REQUIRED_COLUMNS: [&str; 12] = [
    "model_id",
    "architecture",
    "generation",
    "author",
    "removed",
    "not_avail",
    "type",
    "chat_template",
    "mo_e",
    "merged",
    "precision",
    "nbpars",
];

/// Deployment covariates, in column order of [`ModelMeta::w`].
pub const DEPLOYMENT_FLAGS: [&str; 7] =
    ["chat_template", "chat", "domain_tune", "merged", "pretrained", "continuous_pretrain", "mixture_of_experts"];

/// Metadata columns joined with ":" into one facet label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FacetComposition(pub Vec<String>);

impl FacetComposition {
    pub fn parse(spec: &str) -> Self {
        FacetComposition(spec.split(':').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
    }

    pub fn architecture() -> Self {
        Self::parse("architecture:generation")
    }

    pub fn contributor() -> Self {
        Self::parse("author:removed:not_avail")
    }

    pub fn deployment() -> Self {
        Self::parse("type:chat_template:mo_e:merged:precision")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub model_id: String,
    /// Raw attribute columns.
    pub attrs: BTreeMap<String, String>,
    pub architecture: String,
    pub contributor: String,
    pub deployment: String,
    /// `log10` of the parameter count in billions.
    pub x: f64,
    /// Deployment flags as 0/1, ordered as [`DEPLOYMENT_FLAGS`].
    pub w: [f64; 7],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    /// Index into [`EcosystemMetadata::models`].
    pub model: usize,
    pub bench: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcosystemMetadata {
    pub models: Vec<ModelMeta>,
    pub scores: Vec<ScoreRow>,
    pub input_rows: usize,
    pub dropped_rows: usize,
}

fn flag(v: &str) -> bool {
    matches!(v.trim().to_ascii_lowercase().as_str(), "1" | "true" | "yes" | "y" | "t")
}

fn type_flags(t: &str) -> (bool, bool, bool, bool) {
    let t = t.to_ascii_lowercase();
    let chat = t.contains("chat");
    let domain = t.contains("fine-tuned") || t.contains("domain");
    let continuous = t.contains("continuous");
    let pretrained = !continuous && t.contains("pretrained");
    (chat, domain, pretrained, continuous)
}

impl ModelMeta {
    /// Builds a model record from raw attributes, composing the default
    /// facet labels and deployment flags.
    pub fn from_attrs(model_id: String, attrs: BTreeMap<String, String>, x: f64) -> Self {
        let compose = |c: &FacetComposition| compose_label(&attrs, c);
        let (chat, domain, pretrained, continuous) = type_flags(attrs.get("type").map(String::as_str).unwrap_or(""));
        let get = |k: &str| attrs.get(k).map(|v| flag(v)).unwrap_or(false);
        let merged = get("merged") || attrs.get("type").is_some_and(|t| t.to_ascii_lowercase().contains("merge"));
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        let w = [b(get("chat_template")), b(chat), b(domain), b(merged), b(pretrained), b(continuous), b(get("mo_e"))];
        Self {
            architecture: compose(&FacetComposition::architecture()),
            contributor: compose(&FacetComposition::contributor()),
            deployment: compose(&FacetComposition::deployment()),
            model_id,
            attrs,
            x,
            w,
        }
    }
}

fn compose_label(attrs: &BTreeMap<String, String>, comp: &FacetComposition) -> String {
    comp.0.iter().map(|c| attrs.get(c).map(String::as_str).unwrap_or("")).collect::<Vec<_>>().join(":")
}

impl EcosystemMetadata {
    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    /// Facet labels per model for a composition of raw columns.
    pub fn facet_labels(&self, comp: &FacetComposition) -> Result<Vec<String>, DataError> {
        if let Some(m) = self.models.first() {
            for c in &comp.0 {
                if c != "model_id" && !m.attrs.contains_key(c) {
                    return Err(DataError::MissingColumn(c.clone()));
                }
            }
        }
        Ok(self
            .models
            .iter()
            .map(|m| {
                comp.0
                    .iter()
                    .map(|c| if c == "model_id" { m.model_id.as_str() } else { m.attrs[c].as_str() })
                    .collect::<Vec<_>>()
                    .join(":")
            })
            .collect())
    }

    /// Position of each requested model id in `models`.
    pub fn align(&self, model_ids: &[String]) -> Result<Vec<usize>, DataError> {
        let index: HashMap<&str, usize> =
            self.models.iter().enumerate().map(|(i, m)| (m.model_id.as_str(), i)).collect();
        model_ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| DataError::Invalid(format!("no metadata for model `{id}`")))
            })
            .collect()
    }

    pub fn manifest(&self, source: &Path) -> Manifest {
        let mut benches: Vec<&str> = self.scores.iter().map(|s| s.bench.as_str()).collect();
        benches.sort_unstable();
        benches.dedup();
        Manifest {
            source: source.display().to_string(),
            kind: "metadata".into(),
            input_rows: self.input_rows,
            retained_rows: self.input_rows - self.dropped_rows,
            dropped_rows: self.dropped_rows,
            columns: REQUIRED_COLUMNS.len(),
            models: self.models.len(),
            items: 0,
            benches: benches.len(),
            zero_variance_items: Vec::new(),
            seed: None,
            draw_algorithm: None,
        }
    }
}

/// Reads model metadata. When the file also has `bench` and `val` columns,
/// each row additionally contributes one leaderboard score and model
/// attributes may repeat across rows (they must agree).
pub fn ingest_metadata(path: &Path) -> Result<EcosystemMetadata, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let mut cols = Vec::new();
    for name in REQUIRED_COLUMNS {
        cols.push((name, header_index(&headers, name)?));
    }
    let extra: Vec<(String, usize)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !REQUIRED_COLUMNS.contains(&h.trim()) && !matches!(h.trim(), "bench" | "val"))
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let bench_col = headers.iter().position(|h| h.trim() == "bench");
    let val_col = headers.iter().position(|h| h.trim() == "val");
    let long = match (bench_col, val_col) {
        (Some(b), Some(v)) => Some((b, v)),
        (None, None) => None,
        (Some(_), None) => return Err(DataError::MissingColumn("val".into())),
        (None, Some(_)) => return Err(DataError::MissingColumn("bench".into())),
    };

    let mut md = EcosystemMetadata { models: Vec::new(), scores: Vec::new(), input_rows: 0, dropped_rows: 0 };
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut score_seen = std::collections::HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        md.input_rows += 1;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let model_id = field(cols[0].1);
        if model_id.is_empty() {
            return Err(DataError::Invalid(format!("row {row}: empty model_id")));
        }
        let raw_np = field(cols[11].1);
        let nbpars: f64 = if raw_np.is_empty() {
            0.0
        } else {
            raw_np.parse().map_err(|_| DataError::NonNumeric { row, column: "nbpars".into(), value: raw_np.clone() })?
        };
        if !(nbpars > 0.0) || !nbpars.is_finite() {
            md.dropped_rows += 1;
            continue;
        }
        let mut attrs = BTreeMap::new();
        for &(name, i) in &cols[1..11] {
            attrs.insert(name.to_string(), field(i));
        }
        for (name, i) in &extra {
            attrs.insert(name.clone(), field(*i));
        }
        for key in ["architecture", "author"] {
            if attrs[key].is_empty() {
                return Err(DataError::Invalid(format!("row {row}: empty `{key}` label")));
            }
        }
        let x = nbpars.log10();
        let m = match index.get(&model_id) {
            Some(&m) => {
                let prev = &md.models[m];
                if prev.attrs != attrs || prev.x != x {
                    return Err(DataError::Invalid(format!(
                        "row {row}: attributes of `{model_id}` disagree with an earlier row"
                    )));
                }
                if long.is_none() {
                    return Err(DataError::Invalid(format!("row {row}: duplicate model `{model_id}`")));
                }
                m
            }
            None => {
                md.models.push(ModelMeta::from_attrs(model_id.clone(), attrs, x));
                index.insert(model_id.clone(), md.models.len() - 1);
                md.models.len() - 1
            }
        };
        if let Some((cb, cv)) = long {
            let bench = field(cb);
            let raw = field(cv);
            if bench.is_empty() && raw.is_empty() {
                continue;
            }
            let value: f64 =
                raw.parse().map_err(|_| DataError::NonNumeric { row, column: "val".into(), value: raw.clone() })?;
            if !value.is_finite() || bench.is_empty() {
                return Err(DataError::Invalid(format!("row {row}: invalid score")));
            }
            if !score_seen.insert((m, bench.clone())) {
                return Err(DataError::Invalid(format!("row {row}: duplicate score for `{model_id}` on `{bench}`")));
            }
            md.scores.push(ScoreRow { model: m, bench, value });
        }
    }
    if md.dropped_rows > 0 {
        log::info!("dropped {} rows with no positive model size", md.dropped_rows);
    }
    Ok(md)
}

/// Writes metadata in the layout [`ingest_metadata`] reads: one row per
/// score (models without scores get one row with empty `bench`/`val`).
/// `nbpars` is written as `10^x`.
pub fn write_metadata(md: &EcosystemMetadata, path: &Path) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let extra: Vec<String> = {
        let mut keys = std::collections::BTreeSet::new();
        for m in &md.models {
            for k in m.attrs.keys() {
                if !REQUIRED_COLUMNS.contains(&k.as_str()) {
                    keys.insert(k.clone());
                }
            }
        }
        keys.into_iter().collect()
    };
    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(extra.iter().cloned());
    header.push("bench".into());
    header.push("val".into());
    w.write_record(&header)?;
    let mut by_model: Vec<Vec<&ScoreRow>> = vec![Vec::new(); md.models.len()];
    for s in &md.scores {
        by_model[s.model].push(s);
    }
    for (m, meta) in md.models.iter().enumerate() {
        let mut base: Vec<String> = vec![meta.model_id.clone()];
        for c in &REQUIRED_COLUMNS[1..11] {
            base.push(meta.attrs.get(*c).cloned().unwrap_or_default());
        }
        base.push(format!("{}", 10f64.powf(meta.x)));
        for k in &extra {
            base.push(meta.attrs.get(k).cloned().unwrap_or_default());
        }
        if by_model[m].is_empty() {
            let mut rec = base.clone();
            rec.push(String::new());
            rec.push(String::new());
            w.write_record(&rec)?;
        }
        for s in &by_model[m] {
            let mut rec = base.clone();
            rec.push(s.bench.clone());
            rec.push(format!("{}", s.value));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| DataError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "model_id,architecture,generation,author,removed,not_avail,type,chat_template,mo_e,merged,precision,nbpars,bench,val";

    fn ingest(body: &str) -> Result<EcosystemMetadata, DataError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("meta.csv");
        std::fs::write(&p, format!("{HEADER}\n{body}")).unwrap();
        ingest_metadata(&p)
    }

    #[test]
    fn composite_labels_and_size() {
        let md = ingest(
            "m1,llama,3,ab,0,1,💬 chat models,1,0,0,bf16,7,bbh,40.5\n\
             m1,llama,3,ab,0,1,💬 chat models,1,0,0,bf16,7,math,12.0\n\
             m2,qwen,2,cd,0,0,🟢 pretrained,0,0,0,bf16,0,bbh,30.0\n\
             m3,qwen,2,cd,1,0,🤝 base merges and moerges,0,1,1,f16,14,bbh,35.0\n",
        )
        .unwrap();
        assert_eq!(md.models.len(), 2);
        assert_eq!(md.dropped_rows, 1);
        assert_eq!(md.input_rows, 4);
        assert_eq!(md.scores.len(), 3);
        let m1 = &md.models[0];
        assert!((m1.x - 0.845_098_040_014_256_8).abs() < 1e-12);
        assert_eq!(m1.contributor, "ab:0:1");
        assert_eq!(m1.architecture, "llama:3");
        assert_eq!(m1.deployment, "💬 chat models:1:0:0:bf16");
        assert_eq!(m1.w, [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(md.models[1].w, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let labels = md.facet_labels(&FacetComposition::parse("author")).unwrap();
        assert_eq!(labels, vec!["ab", "cd"]);
    }

    #[test]
    fn errors() {
        assert!(matches!(ingest("m1,llama,3,ab,0,1,chat,1,0,0,bf16,seven,bbh,1\n"), Err(DataError::NonNumeric { .. })));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "model_id,architecture\nm1,llama\n").unwrap();
        assert!(matches!(ingest_metadata(&p), Err(DataError::MissingColumn(_))));
    }

    #[test]
    fn dropped_plus_retained_equals_input() {
        let body: String = (0..20)
            .map(|i| format!("m{i},a,1,u{},0,0,chat,0,0,0,bf16,{},bbh,1\n", i % 3, (i % 4) as f64 - 1.0))
            .collect();
        let md = ingest(&body).unwrap();
        assert_eq!(md.dropped_rows + md.scores.len(), md.input_rows);
        assert_eq!(md.dropped_rows, 10);
    }
}
