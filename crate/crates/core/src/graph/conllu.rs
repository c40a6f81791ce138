//! Reader for CoNLL-U dependency parses.
//!
//! Only the FORM (column 2) and HEAD (column 7) fields are used. Multiword
//! token ranges (`3-4`) and empty nodes (`5.1`) are skipped.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Surface tokens of one sentence with their 1-based heads (0 = root).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedSentence {
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
}

impl ParsedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn load_conllu(path: impl AsRef<Path>) -> Result<Vec<ParsedSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_conllu(&text, path)
}

/// Parses CoNLL-U text. `origin` is only used in error messages.
pub fn parse_conllu(text: &str, origin: &Path) -> Result<Vec<ParsedSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut heads = Vec::new();
    let mut start_line = 1;
    let err = |line: usize, msg: String| Error::Parse { path: PathBuf::from(origin), line, msg };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                let sentence = ParsedSentence { tokens: std::mem::take(&mut tokens), heads: std::mem::take(&mut heads) };
                validate_heads(&sentence.heads)
                    .map_err(|e| Error::Structure(format!("{}:{}: {}", origin.display(), start_line, e)))?;
                out.push(sentence);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if tokens.is_empty() {
            start_line = lineno;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(lineno, format!("expected 10 tab-separated columns, found {}", cols.len())));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| err(lineno, format!("bad token id {id:?}")))?;
        if id != tokens.len() + 1 {
            return Err(err(lineno, format!("token id {} out of sequence (expected {})", id, tokens.len() + 1)));
        }
        let head: usize = cols[6].parse().map_err(|_| err(lineno, format!("bad head {:?}", cols[6])))?;
        tokens.push(cols[1].to_lowercase());
        heads.push(head);
    }
    if !tokens.is_empty() {
        validate_heads(&heads).map_err(|e| Error::Structure(format!("{}:{}: {}", origin.display(), start_line, e)))?;
        out.push(ParsedSentence { tokens, heads });
    }
    Ok(out)
}

/// Checks that `heads` describes a single rooted tree over `1..=k`.
pub fn validate_heads(heads: &[usize]) -> std::result::Result<(), String> {
    let k = heads.len();
    if k == 0 {
        return Err("empty sentence".into());
    }
    if let Some((i, &h)) = heads.iter().enumerate().find(|(_, &h)| h > k) {
        return Err(format!("token {} has head {} beyond sentence length {}", i + 1, h, k));
    }
    if let Some(i) = heads.iter().enumerate().position(|(i, &h)| h == i + 1) {
        return Err(format!("token {} is its own head", i + 1));
    }
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots != 1 {
        return Err(format!("expected exactly one root, found {roots}"));
    }
    for start in 0..k {
        let mut node = start;
        let mut steps = 0;
        while heads[node] != 0 {
            node = heads[node] - 1;
            steps += 1;
            if steps > k {
                return Err(format!("cycle through token {}", start + 1));
            }
        }
    }
    Ok(())
}

/// Renders a sentence as a minimal CoNLL-U block.
pub fn write_conllu_block(sentence: &ParsedSentence) -> String {
    let mut s = String::new();
    for (i, (tok, head)) in sentence.tokens.iter().zip(&sentence.heads).enumerate() {
        let rel = if *head == 0 { "root" } else { "dep" };
        s.push_str(&format!("{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n", i + 1, tok, head, rel));
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ParsedSentence>> {
        parse_conllu(text, Path::new("test.conllu"))
    }

    const THREE: &str = "# text = The food rocks\n\
        1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_\n\
        2\tfood\tfood\tNOUN\t_\t_\t3\tnsubj\t_\t_\n\
        3\trocks\trock\tVERB\t_\t_\t0\troot\t_\t_\n\n";

    #[test]
    fn reads_tokens_and_heads() {
        let s = parse(THREE).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, ["the", "food", "rocks"]);
        assert_eq!(s[0].heads, [2, 3, 0]);
    }

    #[test]
    fn empty_input_has_no_sentences() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn skips_ranges_and_empty_nodes() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
            1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n\
            2\tn't\t_\t_\t_\t_\t1\tneg\t_\t_\n\
            2.1\tgap\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let s = parse(text).unwrap();
        assert_eq!(s[0].tokens, ["do", "n't"]);
        assert_eq!(s[0].heads, [0, 1]);
    }

    #[test]
    fn head_beyond_length_is_structure_error() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\t5\tdep\t_\t_\n";
        assert!(matches!(parse(text), Err(Error::Structure(_))));
    }

    #[test]
    fn cycle_is_structure_error() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n\
            2\tb\t_\t_\t_\t_\t3\tdep\t_\t_\n\
            3\tc\t_\t_\t_\t_\t2\tdep\t_\t_\n";
        assert!(matches!(parse(text), Err(Error::Structure(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "# c\n1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\n";
        match parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "1\ta\t_\t_\t_\t_\tX\troot\t_\t_\n";
        assert!(matches!(parse(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn written_blocks_parse_back() {
        let s = ParsedSentence { tokens: vec!["i".into(), "like".into(), "it".into()], heads: vec![2, 0, 2] };
        let text = write_conllu_block(&s) + &write_conllu_block(&s);
        assert_eq!(parse(&text).unwrap(), vec![s.clone(), s]);
    }
}
