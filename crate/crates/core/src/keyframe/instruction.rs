//! View/action vocabulary and instruction parsing.
//!
//! The built-in parser lowercases the text, splits it on every
//! non-alphanumeric character and matches these words:
//!
//! | target       | words                                                        |
//! |--------------|--------------------------------------------------------------|
//! | `front`      | front                                                        |
//! | `back`       | back                                                         |
//! | `left`       | left                                                         |
//! | `right`      | right                                                        |
//! | `raise-hand` | raise, raises, raising, raised followed within two words by hand, hands, arm, arms |
//! | `turn`       | turn, turns, turning                                         |
//! | `walk`       | walk, walks, walking                                         |
//!
//! Targets keep the order of their first mention; repeats are dropped.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    Front,
    Back,
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    RaiseHand,
    Turn,
    Walk,
}

/// A view or action tag, used both as an instruction target and as a frame label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    View(View),
    Action(Action),
}

impl Target {
    pub const ALL: [Target; 7] = [
        Target::View(View::Front),
        Target::View(View::Back),
        Target::View(View::Left),
        Target::View(View::Right),
        Target::Action(Action::RaiseHand),
        Target::Action(Action::Turn),
        Target::Action(Action::Walk),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::View(View::Front) => "front",
            Target::View(View::Back) => "back",
            Target::View(View::Left) => "left",
            Target::View(View::Right) => "right",
            Target::Action(Action::RaiseHand) => "raise-hand",
            Target::Action(Action::Turn) => "turn",
            Target::Action(Action::Walk) => "walk",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown view or action {s:?}")))
    }
}

impl View {
    pub fn name(self) -> &'static str {
        Target::View(self).name()
    }
}

impl Action {
    pub fn name(self) -> &'static str {
        Target::Action(self).name()
    }
}

/// Views and actions requested by an instruction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InstructionTargets {
    pub views: Vec<View>,
    pub actions: Vec<Action>,
}

impl InstructionTargets {
    pub fn new(views: Vec<View>, actions: Vec<Action>) -> Result<Self> {
        if views.is_empty() && actions.is_empty() {
            return Err(Error::EmptyTargets(String::new()));
        }
        Ok(InstructionTargets { views, actions })
    }

    /// Views first, then actions, the order anchors are generated in.
    pub fn targets(&self) -> Vec<Target> {
        self.views
            .iter()
            .map(|&v| Target::View(v))
            .chain(self.actions.iter().map(|&a| Target::Action(a)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.views.len() + self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, t: Target) -> bool {
        match t {
            Target::View(v) => self.views.contains(&v),
            Target::Action(a) => self.actions.contains(&a),
        }
    }
}

impl fmt::Display for InstructionTargets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.targets().into_iter().map(Target::name).collect();
        f.write_str(&names.join(","))
    }
}

/// Turns free text into targets; implement this to plug in an external parser.
pub trait InstructionParser {
    fn parse(&self, text: &str) -> Result<InstructionTargets>;
}

/// The fixed-vocabulary keyword parser described in the module docs.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeywordParser;

const RAISE_WORDS: [&str; 4] = ["raise", "raises", "raising", "raised"];
const LIMB_WORDS: [&str; 4] = ["hand", "hands", "arm", "arms"];
const RAISE_WINDOW: usize = 2;

impl InstructionParser for KeywordParser {
    fn parse(&self, text: &str) -> Result<InstructionTargets> {
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        let mut found: Vec<Target> = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            let hit = match *tok {
                "front" => Some(Target::View(View::Front)),
                "back" => Some(Target::View(View::Back)),
                "left" => Some(Target::View(View::Left)),
                "right" => Some(Target::View(View::Right)),
                "turn" | "turns" | "turning" => Some(Target::Action(Action::Turn)),
                "walk" | "walks" | "walking" => Some(Target::Action(Action::Walk)),
                t if RAISE_WORDS.contains(&t) => {
                    let window = &tokens[i + 1..tokens.len().min(i + 1 + RAISE_WINDOW)];
                    window
                        .iter()
                        .any(|w| LIMB_WORDS.contains(w))
                        .then_some(Target::Action(Action::RaiseHand))
                }
                _ => None,
            };
            if let Some(t) = hit {
                if !found.contains(&t) {
                    found.push(t);
                }
            }
        }
        let mut views = Vec::new();
        let mut actions = Vec::new();
        for t in found {
            match t {
                Target::View(v) => views.push(v),
                Target::Action(a) => actions.push(a),
            }
        }
        InstructionTargets::new(views, actions).map_err(|_| Error::EmptyTargets(text.to_string()))
    }
}

/// Parses with the built-in [`KeywordParser`].
pub fn parse_instruction(text: &str) -> Result<InstructionTargets> {
    KeywordParser.parse(text)
}
