use super::{header_index, DataError, Manifest};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// Cell value for a missing response.
pub const MISSING: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// One row per model, item columns named `<bench>__<item>`.
    Wide,
    /// Columns `model_id, bench, item, response`.
    Long,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "wide" => Ok(Layout::Wide),
            "long" => Ok(Layout::Long),
            other => Err(format!("unknown layout `{other}` (expected wide or long)")),
        }
    }
}

/// Binary N×p response matrix, row-major, cells in {0, 1, [`MISSING`]}.
///
/// Benchmarks are indexed `0..K`; every item maps to exactly one of them
/// and every benchmark has at least one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    bench_names: Vec<String>,
    bench_of: Vec<usize>,
    values: Vec<u8>,
    zero_variance: Vec<bool>,
}

impl ResponseMatrix {
    pub fn new(
        model_ids: Vec<String>,
        item_ids: Vec<String>,
        bench_names: Vec<String>,
        bench_of: Vec<usize>,
        values: Vec<u8>,
    ) -> Result<Self, DataError> {
        let n = model_ids.len();
        let p = item_ids.len();
        if n < 2 || p < 2 {
            return Err(DataError::Invalid(format!(
                "response matrix needs at least 2 models and 2 items, got {n}×{p}"
            )));
        }
        if bench_of.len() != p || values.len() != n * p {
            return Err(DataError::Invalid("response matrix dimensions disagree".into()));
        }
        let k = bench_names.len();
        if k == 0 {
            return Err(DataError::Invalid("no benchmarks".into()));
        }
        let mut counts = vec![0usize; k];
        for &b in &bench_of {
            if b >= k {
                return Err(DataError::Invalid(format!("benchmark index {b} out of range")));
            }
            counts[b] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(DataError::Invalid(format!("benchmark `{}` has no items", bench_names[empty])));
        }
        if let Some(&v) = values.iter().find(|&&v| v > 1 && v != MISSING) {
            return Err(DataError::Invalid(format!("cell value {v} is not binary")));
        }
        let mut rm = Self { model_ids, item_ids, bench_names, bench_of, values, zero_variance: Vec::new() };
        rm.zero_variance = (0..p).map(|j| rm.column_is_constant(j)).collect();
        Ok(rm)
    }

    fn column_is_constant(&self, j: usize) -> bool {
        let mut seen = [false; 2];
        for i in 0..self.n_models() {
            if let Some(v) = self.get(i, j) {
                seen[v as usize] = true;
            }
        }
        !(seen[0] && seen[1])
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_benches(&self) -> usize {
        self.bench_names.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn bench_names(&self) -> &[String] {
        &self.bench_names
    }

    pub fn bench_of(&self) -> &[usize] {
        &self.bench_of
    }

    pub fn raw(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<u8> {
        let v = self.values[i * self.item_ids.len() + j];
        (v != MISSING).then_some(v)
    }

    pub fn bench_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_benches()];
        for &b in &self.bench_of {
            c[b] += 1;
        }
        c
    }

    pub fn items_of_bench(&self, k: usize) -> Vec<usize> {
        (0..self.n_items()).filter(|&j| self.bench_of[j] == k).collect()
    }

    /// Items whose non-missing responses are all equal.
    pub fn zero_variance(&self) -> &[bool] {
        &self.zero_variance
    }

    pub fn has_missing(&self, j: usize) -> bool {
        (0..self.n_models()).any(|i| self.get(i, j).is_none())
    }

    /// Proportion correct among non-missing responses.
    pub fn p_correct(&self, j: usize) -> Option<f64> {
        let (mut s, mut c) = (0usize, 0usize);
        for i in 0..self.n_models() {
            if let Some(v) = self.get(i, j) {
                s += v as usize;
                c += 1;
            }
        }
        (c > 0).then(|| s as f64 / c as f64)
    }

    /// Submatrix on the given items (in that order). Benchmarks left without
    /// items are removed and the rest re-indexed in order of first use.
    pub fn select_items(&self, items: &[usize]) -> Result<Self, DataError> {
        self.select_items_mapped(items, None)
    }

    /// As [`select_items`](Self::select_items) but with an explicit
    /// benchmark index (in this matrix's numbering) for each selected item.
    pub fn select_items_mapped(&self, items: &[usize], bench_map: Option<&[usize]>) -> Result<Self, DataError> {
        let p = self.n_items();
        let mut remap: Vec<Option<usize>> = vec![None; self.n_benches()];
        let mut names = Vec::new();
        let mut bench_of = Vec::with_capacity(items.len());
        for (s, &j) in items.iter().enumerate() {
            let b = bench_map.map_or(self.bench_of[j], |m| m[s]);
            let nb = *remap[b].get_or_insert_with(|| {
                names.push(self.bench_names[b].clone());
                names.len() - 1
            });
            bench_of.push(nb);
        }
        let n = self.n_models();
        let mut values = Vec::with_capacity(n * items.len());
        for i in 0..n {
            for &j in items {
                values.push(self.values[i * p + j]);
            }
        }
        Self::new(
            self.model_ids.clone(),
            items.iter().map(|&j| self.item_ids[j].clone()).collect(),
            names,
            bench_of,
            values,
        )
    }

    /// Submatrix on the given model rows.
    pub fn select_models(&self, rows: &[usize]) -> Result<Self, DataError> {
        let p = self.n_items();
        let mut values = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            values.extend_from_slice(&self.values[i * p..(i + 1) * p]);
        }
        Self::new(
            rows.iter().map(|&i| self.model_ids[i].clone()).collect(),
            self.item_ids.clone(),
            self.bench_names.clone(),
            self.bench_of.clone(),
            values,
        )
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<u8, DataError> {
    match raw.trim() {
        "" | "NA" => Ok(MISSING),
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(DataError::InvalidResponse { row, column: column.to_string(), value: other.to_string() }),
    }
}

/// Reads a response file. The returned manifest is not written; callers
/// place it with [`Manifest::write_beside`].
pub fn ingest_responses(path: &Path, layout: Layout) -> Result<(ResponseMatrix, Manifest), DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr.headers()?.clone();
    let (rm, rows) = match layout {
        Layout::Wide => read_wide(&mut rdr, &headers)?,
        Layout::Long => read_long(&mut rdr, &headers)?,
    };
    let manifest = Manifest {
        source: path.display().to_string(),
        kind: format!("responses/{}", if layout == Layout::Wide { "wide" } else { "long" }),
        input_rows: rows,
        retained_rows: rows,
        dropped_rows: 0,
        columns: headers.len(),
        models: rm.n_models(),
        items: rm.n_items(),
        benches: rm.n_benches(),
        zero_variance_items: (0..rm.n_items())
            .filter(|&j| rm.zero_variance[j])
            .map(|j| format!("{}__{}", rm.bench_names[rm.bench_of[j]], rm.item_ids[j]))
            .collect(),
        seed: None,
        draw_algorithm: None,
    };
    for name in &manifest.zero_variance_items {
        log::warn!("item {name} has no variance across models");
    }
    Ok((rm, manifest))
}

fn read_wide<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
    headers: &csv::StringRecord,
) -> Result<(ResponseMatrix, usize), DataError> {
    if headers.get(0).map(str::trim) != Some("model_id") {
        return Err(DataError::MalformedHeader("first column must be `model_id`".into()));
    }
    let mut bench_index: HashMap<String, usize> = HashMap::new();
    let mut bench_names = Vec::new();
    let mut item_ids = Vec::new();
    let mut bench_of = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for h in headers.iter().skip(1) {
        let h = h.trim();
        let (bench, item) = h
            .split_once("__")
            .filter(|(b, i)| !b.is_empty() && !i.is_empty())
            .ok_or_else(|| DataError::MalformedHeader(format!("column `{h}` is not `<bench>__<item>`")))?;
        if !seen.insert(h.to_string()) {
            return Err(DataError::MalformedHeader(format!("duplicate column `{h}`")));
        }
        let b = *bench_index.entry(bench.to_string()).or_insert_with(|| {
            bench_names.push(bench.to_string());
            bench_names.len() - 1
        });
        item_ids.push(item.to_string());
        bench_of.push(b);
    }
    let mut model_ids = Vec::new();
    let mut models_seen = std::collections::HashSet::new();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows += 1;
        if rec.len() != headers.len() {
            return Err(DataError::MalformedHeader(format!(
                "row {} has {} fields, header has {}",
                r + 1,
                rec.len(),
                headers.len()
            )));
        }
        let model = rec[0].trim().to_string();
        if !models_seen.insert(model.clone()) {
            return Err(DataError::DuplicatePair {
                model,
                bench: bench_names[bench_of[0]].clone(),
                item: item_ids[0].clone(),
            });
        }
        for (c, raw) in rec.iter().enumerate().skip(1) {
            values.push(parse_cell(raw, r + 1, &headers[c])?);
        }
        model_ids.push(model);
    }
    Ok((ResponseMatrix::new(model_ids, item_ids, bench_names, bench_of, values)?, rows))
}

fn read_long<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
    headers: &csv::StringRecord,
) -> Result<(ResponseMatrix, usize), DataError> {
    let cm = header_index(headers, "model_id")?;
    let cb = header_index(headers, "bench")?;
    let ci = header_index(headers, "item")?;
    let cr = header_index(headers, "response")?;
    let mut model_index: HashMap<String, usize> = HashMap::new();
    let mut model_ids = Vec::new();
    let mut bench_index: HashMap<String, usize> = HashMap::new();
    let mut bench_names = Vec::new();
    let mut item_index: HashMap<(usize, String), usize> = HashMap::new();
    let mut item_ids = Vec::new();
    let mut bench_of = Vec::new();
    let mut cells: BTreeMap<(usize, usize), u8> = BTreeMap::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows += 1;
        let model = rec.get(cm).unwrap_or("").trim().to_string();
        let bench = rec.get(cb).unwrap_or("").trim().to_string();
        let item = rec.get(ci).unwrap_or("").trim().to_string();
        if model.is_empty() || bench.is_empty() || item.is_empty() {
            return Err(DataError::Invalid(format!("row {}: empty identifier", r + 1)));
        }
        let v = parse_cell(rec.get(cr).unwrap_or(""), r + 1, "response")?;
        let m = *model_index.entry(model.clone()).or_insert_with(|| {
            model_ids.push(model.clone());
            model_ids.len() - 1
        });
        let b = *bench_index.entry(bench.clone()).or_insert_with(|| {
            bench_names.push(bench.clone());
            bench_names.len() - 1
        });
        let j = *item_index.entry((b, item.clone())).or_insert_with(|| {
            item_ids.push(item.clone());
            bench_of.push(b);
            item_ids.len() - 1
        });
        if cells.insert((m, j), v).is_some() {
            return Err(DataError::DuplicatePair { model, bench, item });
        }
    }
    let (n, p) = (model_ids.len(), item_ids.len());
    let mut values = vec![MISSING; n * p];
    for ((m, j), v) in cells {
        values[m * p + j] = v;
    }
    Ok((ResponseMatrix::new(model_ids, item_ids, bench_names, bench_of, values)?, rows))
}

/// Writes `rm` in the given layout. Missing cells are written as empty
/// responses in both layouts.
pub fn write_responses(rm: &ResponseMatrix, path: &Path, layout: Layout) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let cell = |v: Option<u8>| match v {
        Some(0) => "0",
        Some(_) => "1",
        None => "",
    };
    match layout {
        Layout::Wide => {
            let mut header = vec!["model_id".to_string()];
            for j in 0..rm.n_items() {
                header.push(format!("{}__{}", rm.bench_names[rm.bench_of[j]], rm.item_ids[j]));
            }
            w.write_record(&header)?;
            for i in 0..rm.n_models() {
                let mut rec = vec![rm.model_ids[i].as_str()];
                rec.extend((0..rm.n_items()).map(|j| cell(rm.get(i, j))));
                w.write_record(&rec)?;
            }
        }
        Layout::Long => {
            w.write_record(["model_id", "bench", "item", "response"])?;
            for i in 0..rm.n_models() {
                for j in 0..rm.n_items() {
                    w.write_record([
                        rm.model_ids[i].as_str(),
                        rm.bench_names[rm.bench_of[j]].as_str(),
                        rm.item_ids[j].as_str(),
                        cell(rm.get(i, j)),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| DataError::io(path, e))?;
    Ok(())
}
