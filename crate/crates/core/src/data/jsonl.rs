use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{detokenize, tokenize, Example};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    label: usize,
    text: std::borrow::Cow<'a, str>,
}

/// Reads `{"label": int, "text": "t.. t.."}` records, one per line.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_jsonl(path: &Path, vocab_size: usize) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        let v: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| parse_err("expected a JSON object".into()))?;
        let label = obj
            .get("label")
            .ok_or_else(|| parse_err("missing field \"label\"".into()))?
            .as_u64()
            .ok_or_else(|| parse_err("\"label\" must be a non-negative integer".into()))?;
        let text = obj
            .get("text")
            .ok_or_else(|| parse_err("missing field \"text\"".into()))?
            .as_str()
            .ok_or_else(|| parse_err("\"text\" must be a string".into()))?;
        let tokens = tokenize(text, vocab_size).map_err(|e| parse_err(e.to_string()))?;
        out.push(Example {
            tokens,
            label: label as usize,
        });
    }
    Ok(out)
}

pub fn save_jsonl(examples: &[Example], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        let rec = Record {
            label: ex.label,
            text: detokenize(&ex.tokens).into(),
        };
        serde_json::to_writer(&mut buf, &rec).expect("in-memory write");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_task, TaskSpec};

    #[test]
    fn round_trip() {
        let spec = TaskSpec {
            num_classes: 3,
            vocab_size: 40,
            tokens_per_class: 3,
            noise_rate: 0.4,
            relatedness: 0.0,
            parent: None,
            sequence_length: 7,
            train_size: 25,
            val_size: 0,
            test_size: 0,
            seed: 3,
        };
        let t = generate_task(0, "x", &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        save_jsonl(&t.train, &p).unwrap();
        assert_eq!(load_jsonl(&p, 40).unwrap(), t.train);
    }

    #[test]
    fn empty_file_is_empty_split() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_jsonl(&p, 10).unwrap().is_empty());
    }

    #[test]
    fn missing_label_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "{\"text\": \"t1 t2\"}\n").unwrap();
        match load_jsonl(&p, 10) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("label"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_token_errors_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "{\"label\":0,\"text\":\"t1\"}\n{\"label\":1,\"text\":\"foo\"}\n").unwrap();
        assert!(matches!(load_jsonl(&p, 10), Err(Error::Parse { line: 2, .. })));
    }
}
