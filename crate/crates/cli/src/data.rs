//! Treebank discovery and loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ordfree_core::conllu::read_treebank_file;
use ordfree_core::{Sentence, Treebank};

/// Language code of a UD-style file name: the part of the stem before the
/// first underscore (`en_ewt-ud-train.conllu` is `en`).
pub fn language_of(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let code = stem.split('_').next().unwrap_or(stem);
    (!code.is_empty()).then(|| code.to_string())
}

/// `*.conllu` files directly under `dir`, grouped by language code.
pub fn discover(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut out: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("reading treebank directory {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("conllu") {
            continue;
        }
        let lang = language_of(&path).with_context(|| format!("no language code in {}", path.display()))?;
        out.entry(lang).or_default().push(path);
    }
    for files in out.values_mut() {
        files.sort();
    }
    if out.is_empty() {
        bail!("no .conllu files in {}", dir.display());
    }
    Ok(out)
}

/// Concatenation of several treebanks of one language.
pub fn load_language(language: &str, files: &[PathBuf]) -> Result<Treebank> {
    let mut sentences: Vec<Sentence> = Vec::new();
    for f in files {
        let tb = read_treebank_file(f, language).with_context(|| format!("loading {}", f.display()))?;
        sentences.extend(tb.into_sentences());
    }
    Ok(Treebank::new(language, sentences)?)
}

/// Every language found under `dir`, in code order.
pub fn load_directory(dir: &Path) -> Result<Vec<Treebank>> {
    discover(dir)?
        .iter()
        .map(|(lang, files)| load_language(lang, files))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_codes() {
        assert_eq!(language_of(Path::new("x/en_ewt-ud-train.conllu")).as_deref(), Some("en"));
        assert_eq!(language_of(Path::new("de.conllu")).as_deref(), Some("de"));
        assert_eq!(language_of(Path::new("_x.conllu")), None);
    }
}
