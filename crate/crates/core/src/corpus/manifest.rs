//! Tab-separated manifests: `audio_path<TAB>speaker_id<TAB>label_path|-`.
//! Relative paths resolve against the manifest's directory. Blank lines and
//! lines starting with `#` are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dsp::{read_wav, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    /// File stem of the audio path.
    pub id: String,
    pub audio: PathBuf,
    pub speaker: String,
    pub labels: Option<PathBuf>,
}

impl Utterance {
    pub fn load_audio(&self, sample_rate: u32) -> Result<Waveform> {
        read_wav(&self.audio, sample_rate)
    }

    /// Frame-level phone labels; errors if the utterance has none.
    pub fn load_labels(&self) -> Result<Vec<usize>> {
        let path = self.labels.as_ref().ok_or_else(|| Error::Labels {
            utterance: self.id.clone(),
            reason: "no label file in manifest".into(),
        })?;
        load_labels(path, &self.id)
    }
}

/// A validated list of utterances.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.utterances.iter().map(|u| u.speaker.clone()).collect();
        s.dedup();
        s.sort();
        s.dedup();
        s
    }

    pub fn by_speaker(&self, speaker: &str) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.speaker == speaker).collect()
    }

    pub fn find(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }
}

pub fn load_labels(path: &Path, utterance: &str) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| Error::Labels {
                utterance: utterance.to_string(),
                reason: format!("{}:{}: {:?} is not a phone index", path.display(), i + 1, l),
            })
        })
        .collect()
}

fn resolve(base: &Path, field: &str) -> PathBuf {
    let p = Path::new(field);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut utterances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let (audio, speaker, labels) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if audio.is_empty() || speaker.is_empty() || labels.is_empty() {
            return Err(malformed("empty field".into()));
        }
        let audio = resolve(base, audio);
        if !audio.is_file() {
            return Err(Error::io(
                &audio,
                std::io::Error::new(std::io::ErrorKind::NotFound, "audio file listed in manifest not found"),
            ));
        }
        let labels = match labels {
            "-" => None,
            l => {
                let p = resolve(base, l);
                if !p.is_file() {
                    return Err(Error::io(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "label file listed in manifest not found"),
                    ));
                }
                Some(p)
            }
        };
        let id = audio
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| malformed("audio path has no file name".into()))?;
        utterances.push(Utterance {
            id,
            audio,
            speaker: speaker.to_string(),
            labels,
        });
    }
    Ok(Corpus { utterances })
}

fn relative_to(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
}

/// Writes a manifest with paths relative to its own directory where possible.
pub fn write_manifest(path: &Path, utterances: &[Utterance]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut text = String::new();
    for u in utterances {
        let labels = u
            .labels
            .as_ref()
            .map_or_else(|| "-".to_string(), |l| relative_to(base, l));
        text.push_str(&format!("{}\t{}\t{}\n", relative_to(base, &u.audio), u.speaker, labels));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
