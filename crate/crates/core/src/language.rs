use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unsupported language tag `{0}` (expected one of hi, bn, ml, ha)")]
pub struct UnsupportedLanguage(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown split `{0}` (expected one of train, dtest, etest, ctest)")]
pub struct UnknownSplit(pub String);

/// Unicode script a target language is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Script {
    Latin,
    Devanagari,
    Bengali,
    Malayalam,
}

impl Script {
    /// Classifies a single character, ignoring anything that is not a letter
    /// or combining mark of one of the four scripts.
    pub fn of(c: char) -> Option<Script> {
        match c as u32 {
            0x0900..=0x097F | 0xA8E0..=0xA8FF => Some(Script::Devanagari),
            0x0980..=0x09FF => Some(Script::Bengali),
            0x0D00..=0x0D7F => Some(Script::Malayalam),
            _ if c.is_ascii_alphabetic() => Some(Script::Latin),
            // Latin-1 letters, Latin Extended-A/B and IPA extensions (Hausa hooked letters).
            0x00C0..=0x02AF if c.is_alphabetic() => Some(Script::Latin),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Script::Latin => "Latin",
            Script::Devanagari => "Devanagari",
            Script::Bengali => "Bengali",
            Script::Malayalam => "Malayalam",
        }
    }
}

/// The four target languages of the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Hi,
    Bn,
    Ml,
    Ha,
}

impl Language {
    pub const ALL: [Language; 4] = [Language::Hi, Language::Bn, Language::Ml, Language::Ha];

    pub fn code(self) -> &'static str {
        match self {
            Language::Hi => "hi",
            Language::Bn => "bn",
            Language::Ml => "ml",
            Language::Ha => "ha",
        }
    }

    /// English display name, as substituted into prompts.
    pub fn name(self) -> &'static str {
        match self {
            Language::Hi => "Hindi",
            Language::Bn => "Bengali",
            Language::Ml => "Malayalam",
            Language::Ha => "Hausa",
        }
    }

    pub fn script(self) -> Script {
        match self {
            Language::Hi => Script::Devanagari,
            Language::Bn => Script::Bengali,
            Language::Ml => Script::Malayalam,
            Language::Ha => Script::Latin,
        }
    }

    pub fn from_name(name: &str) -> Option<Language> {
        Language::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = UnsupportedLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hi" => Ok(Language::Hi),
            "bn" => Ok(Language::Bn),
            "ml" => Ok(Language::Ml),
            "ha" => Ok(Language::Ha),
            _ => Err(UnsupportedLanguage(s.to_string())),
        }
    }
}

/// Dataset split of the shared task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dtest,
    Etest,
    Ctest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dtest, Split::Etest, Split::Ctest];

    pub fn code(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dtest => "dtest",
            Split::Etest => "etest",
            Split::Ctest => "ctest",
        }
    }

    /// Row label used in statistics tables.
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "Train",
            Split::Dtest => "D-Test",
            Split::Etest => "E-Test",
            Split::Ctest => "C-Test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Split {
    type Err = UnknownSplit;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "").as_str() {
            "train" => Ok(Split::Train),
            "dtest" | "dev" => Ok(Split::Dtest),
            "etest" | "evtest" | "eval" => Ok(Split::Etest),
            "ctest" | "chtest" | "challenge" => Ok(Split::Ctest),
            _ => Err(UnknownSplit(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_supported_tags_only() {
        for lang in Language::ALL {
            assert_eq!(lang.code().parse::<Language>().unwrap(), lang);
        }
        assert!("xx".parse::<Language>().is_err());
        assert!("en".parse::<Language>().is_err());
    }

    #[test]
    fn script_classification() {
        assert_eq!(Script::of('स'), Some(Script::Devanagari));
        assert_eq!(Script::of('া'), Some(Script::Bengali));
        assert_eq!(Script::of('മ'), Some(Script::Malayalam));
        assert_eq!(Script::of('ɗ'), Some(Script::Latin));
        assert_eq!(Script::of('ƙ'), Some(Script::Latin));
        assert_eq!(Script::of('7'), None);
        assert_eq!(Script::of(' '), None);
    }

    #[test]
    fn split_aliases() {
        assert_eq!("D-Test".parse::<Split>().unwrap(), Split::Dtest);
        assert_eq!("challenge".parse::<Split>().unwrap(), Split::Ctest);
        assert!("holdout".parse::<Split>().is_err());
    }
}
