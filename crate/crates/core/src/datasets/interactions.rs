use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{DmaeError, Result};

/// One prediction instance: a user's ordered click history (oldest first) and
/// a target item impressed within request `request_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub user_id: String,
    pub request_id: String,
    pub history: Vec<String>,
    pub target_item: String,
    pub label: u8,
}

impl Sample {
    /// Keeps only the `max_len` most recent clicks.
    pub fn truncate_history(&mut self, max_len: usize) {
        if self.history.len() > max_len {
            self.history.drain(..self.history.len() - max_len);
        }
    }

    fn to_record(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.user_id,
            self.request_id,
            self.label,
            self.target_item,
            self.history.join(",")
        )
    }
}

/// Parses tab-separated records `user, request, label, target, history`.
/// Histories longer than `max_seq_len` keep their most recent clicks.
pub fn parse_interactions(text: &str, max_seq_len: usize) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let malformed = |message: &str| DmaeError::MalformedRecord {
            line,
            message: message.to_string(),
        };
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 5 {
            return Err(malformed(&format!(
                "expected 5 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let [user, request, label, target, history] = [
            fields[0], fields[1], fields[2], fields[3], fields[4],
        ];
        if user.is_empty() {
            return Err(malformed("empty user id"));
        }
        if request.is_empty() {
            return Err(malformed("empty request id"));
        }
        if target.is_empty() {
            return Err(malformed("empty target item"));
        }
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(DmaeError::InvalidLabel {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let history: Vec<String> = if history.is_empty() {
            Vec::new()
        } else {
            history.split(',').map(str::to_string).collect()
        };
        if history.iter().any(String::is_empty) {
            return Err(malformed("empty item id in history"));
        }
        let mut sample = Sample {
            user_id: user.to_string(),
            request_id: request.to_string(),
            history,
            target_item: target.to_string(),
            label,
        };
        sample.truncate_history(max_seq_len);
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_interactions(path: impl AsRef<Path>, max_seq_len: usize) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DmaeError::io(path, e))?;
    parse_interactions(&text, max_seq_len)
}

fn check_id(id: &str, what: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r', ',']) {
        return Err(DmaeError::MalformedRecord {
            line: 0,
            message: format!("{what} {id:?} is empty or contains a separator"),
        });
    }
    Ok(())
}

pub fn write_interactions(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in samples {
        check_id(&s.user_id, "user id")?;
        check_id(&s.request_id, "request id")?;
        check_id(&s.target_item, "target item")?;
        for h in &s.history {
            check_id(h, "history item")?;
        }
        out.push_str(&s.to_record());
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| DmaeError::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| DmaeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_no_samples() {
        assert!(parse_interactions("", 64).unwrap().is_empty());
    }

    #[test]
    fn maps_fields_directly() {
        let samples = parse_interactions("u1\tr1\t1\titem9\titem1,item2\n", 64).unwrap();
        assert_eq!(
            samples,
            vec![Sample {
                user_id: "u1".into(),
                request_id: "r1".into(),
                history: vec!["item1".into(), "item2".into()],
                target_item: "item9".into(),
                label: 1,
            }]
        );
    }

    #[test]
    fn empty_history_field() {
        let samples = parse_interactions("u1\tr1\t0\ti\t", 64).unwrap();
        assert!(samples[0].history.is_empty());
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let samples = parse_interactions("u\tr\t0\tt\ta,b,c,d,e", 3).unwrap();
        assert_eq!(samples[0].history, vec!["c", "d", "e"]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_interactions("u\tr\t0\tt\ta\nbroken line\n", 64).unwrap_err();
        assert!(matches!(err, DmaeError::MalformedRecord { line: 2, .. }), "{err}");
    }

    #[test]
    fn label_outside_binary_is_rejected() {
        let err = parse_interactions("u\tr\t2\tt\ta", 64).unwrap_err();
        assert!(matches!(err, DmaeError::InvalidLabel { line: 1, .. }));
    }

    #[test]
    fn empty_request_id_is_rejected() {
        assert!(parse_interactions("u\t\t1\tt\ta", 64).is_err());
    }
}
