use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use seqagg::corpus::{
    attach_gold, infer_label_set, merge_sources, parse_conll, Corpus, LabelSet, Layer, RepairPolicy,
};

use crate::args::{GlobalArgs, SourceArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Reads input files and remembers their digests for the run manifest.
#[derive(Debug, Default)]
pub struct Reader {
    pub digests: Vec<InputDigest>,
}

impl Reader {
    pub fn read(&mut self, path: &Path) -> CliResult<String> {
        let bytes = fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.digests.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        });
        String::from_utf8(bytes).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> CliResult<T> {
        let text = self.read(path)?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn policy(global: &GlobalArgs) -> RepairPolicy {
    if global.repair_inputs {
        RepairPolicy::Repair
    } else {
        RepairPolicy::Strict
    }
}

/// Label set from `--types`, otherwise every type seen in `texts`.
pub fn label_set(global: &GlobalArgs, texts: &[&str]) -> CliResult<LabelSet> {
    Ok(match &global.types {
        Some(types) => LabelSet::new(types.iter().map(String::as_str))?,
        None => infer_label_set(texts)?,
    })
}

fn stem(path: &Path) -> CliResult<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Usage(format!("cannot derive a source id from {}", path.display())))
}

fn width(text: &str) -> usize {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .map_or(0, |l| l.split_whitespace().count())
}

fn in_file(path: &Path) -> impl Fn(seqagg::Error) -> CliError + '_ {
    move |source| CliError::InFile {
        path: path.to_path_buf(),
        source,
    }
}

pub struct SourceTexts {
    pub paths: Vec<PathBuf>,
    pub texts: Vec<String>,
}

pub fn read_sources(reader: &mut Reader, args: &SourceArgs) -> CliResult<SourceTexts> {
    let texts = args.inputs.iter().map(|p| reader.read(p)).collect::<CliResult<Vec<_>>>()?;
    Ok(SourceTexts {
        paths: args.inputs.clone(),
        texts,
    })
}

/// Builds the multi-source corpus from one file per source or a single
/// multi-column file.
pub fn parse_sources(
    src: &SourceTexts,
    args: &SourceArgs,
    label_set: &LabelSet,
    global: &GlobalArgs,
) -> CliResult<Corpus> {
    let policy = policy(global);
    if let [path] = src.paths.as_slice() {
        let text = &src.texts[0];
        let w = width(text);
        let layers: Vec<Layer> = match &args.columns {
            Some(cols) => cols
                .iter()
                .map(|c| if c == "gold" { Layer::Gold } else { Layer::Source(c.clone()) })
                .collect(),
            None if w == 2 => vec![Layer::Source(stem(path)?)],
            None => (1..w.max(2)).map(|j| Layer::Source(format!("s{j}"))).collect(),
        };
        return parse_conll(text, label_set, policy, &layers).map_err(in_file(path));
    }
    if args.columns.is_some() {
        return Err(CliError::Usage("--columns applies to a single multi-column input".into()));
    }
    let parts = src
        .paths
        .iter()
        .zip(&src.texts)
        .map(|(path, text)| {
            let id = stem(path)?;
            let corpus = parse_conll(text, label_set, policy, &[Layer::Source(id.clone())]).map_err(in_file(path))?;
            Ok((id, corpus))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(merge_sources(parts)?)
}

/// Parses a two-column gold file.
pub fn parse_gold(path: &Path, text: &str, label_set: &LabelSet, global: &GlobalArgs) -> CliResult<Corpus> {
    parse_conll(text, label_set, policy(global), &[Layer::Gold]).map_err(in_file(path))
}

/// Attaches gold tags to the leading sentences of `corpus`, returning that
/// labelled prefix.
pub fn leading_gold(corpus: &Corpus, gold: &Corpus) -> CliResult<Corpus> {
    if gold.len() > corpus.len() {
        return Err(CliError::Core(seqagg::Error::Input(format!(
            "gold has {} sentences but the inputs only {}",
            gold.len(),
            corpus.len()
        ))));
    }
    let prefix: Vec<usize> = (0..gold.len()).collect();
    Ok(attach_gold(corpus.subset(&prefix), gold)?)
}

pub fn write_output(path: Option<&Path>, content: &str, outputs: &mut Vec<String>) -> CliResult<()> {
    match path {
        Some(p) => {
            fs::write(p, content).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            outputs.push(p.display().to_string());
        }
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes()).map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })?;
        }
    }
    Ok(())
}
