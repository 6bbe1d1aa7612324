//! File formats: game descriptions (TOML), function classes (TOML), and the
//! CSV outputs.
//!
//! Conventions shared by every CSV: players are numbered from 1, contexts
//! and actions from 0, and floats are written with 17 significant digits so
//! they parse back to the identical `f64`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::GapTermsRow;
use crate::error::{Error, Result};
use crate::gamd::GamdTrace;
use crate::game::{
    BehaviorDistribution, FunctionClass, GameSpec, JointPolicy, OfflineDataset, RawGame, Record,
    RewardTensor,
};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameFile {
    game: GameSection,
    contexts: ContextSection,
    actions: ActionSection,
    rewards: BTreeMap<String, TableSection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    reference: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    behavior: Option<BehaviorSection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameSection {
    players: usize,
    eta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ids: Vec<String>,
    rho: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionSection {
    counts: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableSection {
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BehaviorSection {
    mu: Vec<f64>,
}

/// A game plus the behavior distribution its data is logged under.
#[derive(Debug, Clone, PartialEq)]
pub struct GameBundle {
    pub spec: GameSpec,
    pub behavior: BehaviorDistribution,
    /// Whether the file gave `[behavior]` explicitly.
    pub explicit_behavior: bool,
}

fn parse_err(source_name: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        message: message.into(),
    }
}

fn player_key(i: usize) -> String {
    format!("player_{}", i + 1)
}

/// Parses a game description. Reference defaults to uniform and behavior to
/// `rho x reference` when their sections are absent.
pub fn parse_game(text: &str, source_name: &str) -> Result<GameBundle> {
    let file: GameFile = toml::from_str(text).map_err(|e| parse_err(source_name, e.to_string()))?;
    let m = file.game.players;
    if file.actions.counts.len() != m {
        return Err(parse_err(
            source_name,
            format!(
                "[actions] lists {} counts for {m} players",
                file.actions.counts.len()
            ),
        ));
    }
    let nx = file.contexts.rho.len();
    let mut rewards = Vec::with_capacity(m);
    for i in 0..m {
        let table = file.rewards.get(&player_key(i)).ok_or_else(|| {
            parse_err(source_name, format!("missing [rewards.{}]", player_key(i)))
        })?;
        rewards.push(table.values.clone());
    }
    if let Some(extra) = file
        .rewards
        .keys()
        .find(|k| !(0..m).any(|i| &player_key(i) == *k))
    {
        return Err(parse_err(
            source_name,
            format!("unexpected [rewards.{extra}]"),
        ));
    }
    let reference = if file.reference.is_empty() {
        file.actions
            .counts
            .iter()
            .map(|&k| vec![vec![1.0 / k.max(1) as f64; k]; nx])
            .collect()
    } else {
        let mut out = Vec::with_capacity(m);
        for (i, &k) in file.actions.counts.iter().enumerate() {
            let flat = file.reference.get(&player_key(i)).ok_or_else(|| {
                parse_err(source_name, format!("missing reference.{}", player_key(i)))
            })?;
            if flat.len() != nx * k {
                return Err(parse_err(
                    source_name,
                    format!(
                        "reference.{} has {} entries, expected {}",
                        player_key(i),
                        flat.len(),
                        nx * k
                    ),
                ));
            }
            out.push(flat.chunks(k.max(1)).map(<[f64]>::to_vec).collect());
        }
        out
    };
    let raw = RawGame {
        context_labels: file.contexts.ids,
        rho: file.contexts.rho,
        action_counts: file.actions.counts,
        rewards,
        eta: file.game.eta,
        reference,
    };
    let spec = GameSpec::try_from(raw).map_err(|e| parse_err(source_name, e.to_string()))?;
    let (behavior, explicit_behavior) = match file.behavior {
        Some(b) => (
            BehaviorDistribution::new(spec.shape(), b.mu)
                .map_err(|e| parse_err(source_name, format!("[behavior]: {e}")))?,
            true,
        ),
        None => (spec.reference_behavior(), false),
    };
    Ok(GameBundle {
        spec,
        behavior,
        explicit_behavior,
    })
}

pub fn load_game(path: &Path) -> Result<GameBundle> {
    let text = std::fs::read_to_string(path)?;
    parse_game(&text, &path.display().to_string())
}

/// Serializes a game. Floats use the shortest exact representation, so
/// parsing the output reproduces every tensor bit for bit.
pub fn game_to_toml(spec: &GameSpec, behavior: Option<&BehaviorDistribution>) -> Result<String> {
    let raw = spec.to_raw();
    let file = GameFile {
        game: GameSection {
            players: spec.num_players(),
            eta: raw.eta,
        },
        contexts: ContextSection {
            ids: raw.context_labels,
            rho: raw.rho,
        },
        actions: ActionSection {
            counts: raw.action_counts,
        },
        rewards: raw
            .rewards
            .into_iter()
            .enumerate()
            .map(|(i, values)| (player_key(i), TableSection { values }))
            .collect(),
        reference: raw
            .reference
            .into_iter()
            .enumerate()
            .map(|(i, rows)| (player_key(i), rows.into_iter().flatten().collect()))
            .collect(),
        behavior: behavior.map(|b| BehaviorSection {
            mu: b.probs().to_vec(),
        }),
    };
    toml::to_string(&file).map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassEntry {
    members: Vec<Vec<f64>>,
}

/// Parses per-player finite classes: `[player_1] members = [[...], ...]`.
pub fn parse_function_classes(
    text: &str,
    source_name: &str,
    spec: &GameSpec,
) -> Result<Vec<FunctionClass>> {
    let file: BTreeMap<String, ClassEntry> =
        toml::from_str(text).map_err(|e| parse_err(source_name, e.to_string()))?;
    (0..spec.num_players())
        .map(|i| {
            let entry = file
                .get(&player_key(i))
                .ok_or_else(|| parse_err(source_name, format!("missing [{}]", player_key(i))))?;
            let members = entry
                .members
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    RewardTensor::new(spec.shape(), v.clone()).map_err(|e| {
                        parse_err(source_name, format!("{} member {k}: {e}", player_key(i)))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            FunctionClass::new(members, Some(spec.reward(i)))
                .map_err(|e| parse_err(source_name, format!("{}: {e}", player_key(i))))
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            source_name: "csv".into(),
            message: format!("{other:?}"),
        },
    }
}

fn write_rows<W: Write>(
    out: W,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// `tau,context,a_1,...,a_m,r_1,...,r_m`
pub fn write_dataset<W: Write>(out: W, data: &OfflineDataset) -> Result<()> {
    let m = data.shape().num_players();
    let mut cols = vec!["tau".to_string(), "context".to_string()];
    cols.extend((1..=m).map(|i| format!("a_{i}")));
    cols.extend((1..=m).map(|i| format!("r_{i}")));
    write_rows(
        out,
        &cols,
        data.records().iter().enumerate().map(|(tau, r)| {
            let mut row = vec![tau.to_string(), r.context.to_string()];
            row.extend(r.actions.iter().map(|a| a.to_string()));
            row.extend(r.rewards.iter().map(|&v| fmt_f64(v)));
            row
        }),
    )
}

pub fn read_dataset<R: Read>(
    input: R,
    spec: &GameSpec,
    source_name: &str,
) -> Result<OfflineDataset> {
    let m = spec.num_players();
    let mut reader = csv::Reader::from_reader(input);
    let head = reader.headers().map_err(csv_err)?.clone();
    let mut expected = vec!["tau".to_string(), "context".to_string()];
    expected.extend((1..=m).map(|i| format!("a_{i}")));
    expected.extend((1..=m).map(|i| format!("r_{i}")));
    if head.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(parse_err(
            source_name,
            format!("line 1: expected header {}", expected.join(",")),
        ));
    }
    let mut records = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| parse_err(source_name, format!("line {line}: {e}")))?;
        let field = |j: usize| -> Result<&str> {
            row.get(j).ok_or_else(|| {
                parse_err(
                    source_name,
                    format!("line {line}: missing column {}", j + 1),
                )
            })
        };
        let int = |j: usize| -> Result<usize> {
            field(j)?.trim().parse().map_err(|e| {
                parse_err(
                    source_name,
                    format!("line {line}, column {}: {e}", expected[j]),
                )
            })
        };
        let float = |j: usize| -> Result<f64> {
            field(j)?.trim().parse().map_err(|e| {
                parse_err(
                    source_name,
                    format!("line {line}, column {}: {e}", expected[j]),
                )
            })
        };
        let context = int(1)?;
        let actions = (0..m).map(|i| int(2 + i)).collect::<Result<Vec<_>>>()?;
        let rewards = (0..m)
            .map(|i| float(2 + m + i))
            .collect::<Result<Vec<_>>>()?;
        let rec = Record {
            context,
            actions,
            rewards,
        };
        OfflineDataset::new(spec.shape(), vec![rec.clone()])
            .map_err(|e| parse_err(source_name, format!("line {line}: {e}")))?;
        records.push(rec);
    }
    OfflineDataset::new(spec.shape(), records)
}

/// `player,context,action,prob` of each player's marginal.
pub fn write_policy<W: Write, P: JointPolicy>(out: W, policy: &P) -> Result<()> {
    let shape = policy.shape().clone();
    let mut rows = Vec::new();
    for i in 0..shape.num_players() {
        for x in 0..shape.num_contexts() {
            for (a, p) in policy.marginal(i, x).into_iter().enumerate() {
                rows.push(vec![
                    (i + 1).to_string(),
                    x.to_string(),
                    a.to_string(),
                    fmt_f64(p),
                ]);
            }
        }
    }
    write_rows(out, &header(&["player", "context", "action", "prob"]), rows)
}

/// `player,context,value` from a `[player][context]` table.
pub fn write_values<W: Write>(out: W, values: &[Vec<f64>]) -> Result<()> {
    let rows = values.iter().enumerate().flat_map(|(i, per)| {
        per.iter()
            .enumerate()
            .map(move |(x, &v)| vec![(i + 1).to_string(), x.to_string(), fmt_f64(v)])
    });
    write_rows(out, &header(&["player", "context", "value"]), rows)
}

pub fn write_diagnostics<W: Write>(out: W, rows: &[GapTermsRow]) -> Result<()> {
    write_rows(
        out,
        &header(&[
            "player",
            "context",
            "term_I",
            "term_II",
            "term_III",
            "lhs",
            "rhs_smoothness",
            "slack",
        ]),
        rows.iter().map(|r| {
            vec![
                (r.player + 1).to_string(),
                r.context.to_string(),
                fmt_f64(r.term_i),
                fmt_f64(r.term_ii),
                fmt_f64(r.term_iii),
                fmt_f64(r.lhs),
                fmt_f64(r.rhs_smoothness),
                fmt_f64(r.slack),
            ]
        }),
    )
}

/// `t,player,context,action,prob` for every iterate, `t` from 1.
pub fn write_trace<W: Write>(out: W, trace: &GamdTrace) -> Result<()> {
    let mut rows = Vec::new();
    for (t, snap) in trace.snapshots.iter().enumerate() {
        let shape = snap.shape();
        for i in 0..shape.num_players() {
            for x in 0..shape.num_contexts() {
                for (a, &p) in snap.dist(i, x).iter().enumerate() {
                    rows.push(vec![
                        (t + 1).to_string(),
                        (i + 1).to_string(),
                        x.to_string(),
                        a.to_string(),
                        fmt_f64(p),
                    ]);
                }
            }
        }
    }
    write_rows(
        out,
        &header(&["t", "player", "context", "action", "prob"]),
        rows,
    )
}

/// `t,player,context,objective`.
pub fn write_objectives<W: Write>(out: W, trace: &GamdTrace) -> Result<()> {
    let mut rows = Vec::new();
    for (t, per_t) in trace.objectives.iter().enumerate() {
        for (i, per_player) in per_t.iter().enumerate() {
            for (x, &v) in per_player.iter().enumerate() {
                rows.push(vec![
                    (t + 1).to_string(),
                    (i + 1).to_string(),
                    x.to_string(),
                    fmt_f64(v),
                ]);
            }
        }
    }
    write_rows(out, &header(&["t", "player", "context", "objective"]), rows)
}

pub(crate) fn write_table<W: Write>(out: W, cols: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    write_rows(out, &header(cols), rows)
}
