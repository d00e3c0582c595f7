//! Line-oriented text formats: game models (with rewards and penalties),
//! properties, multi-strategies, and solver solution files.
//!
//! All rational literals are exact (`3/4`, `0.75`, `5`); `#` starts a
//! comment; blank lines are ignored; keywords are lowercase. Every parse
//! error carries the line and column of the offending token.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num::Zero;

use crate::game::{
    Action, MultiStrategy, PenaltyKind, PenaltyScheme, Player, Property, PropertyKind, Relation,
    RewardStructure, State, StochasticGame,
};
use crate::rational::{format_rational, parse_rational, Rational};

/// Position of an offending token: 1-based line and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, thiserror::Error)]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, column {}: {}",
            self.span.line, self.span.column, self.message
        )
    }
}

fn err<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        span: SourceSpan { line, column },
        message: message.into(),
    })
}

/// A parsed model file: the game plus its named reward structures and its
/// penalty weights. The penalty kind is not part of the file format; parsed
/// schemes default to static and callers re-type them as needed.
#[derive(Debug, Clone)]
pub struct ParsedModel {
    pub game: StochasticGame,
    pub rewards: BTreeMap<String, RewardStructure>,
    pub penalties: PenaltyScheme,
}

/// One token with its 1-based column.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let body = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in body.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &body[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &body[s..]));
    }
    out
}

/// User identifiers: states, actions, labels, reward names. The `@`
/// character is reserved for generated gadget-state names so that built
/// transformations can never collide with user models.
fn check_id(line: usize, col: usize, id: &str) -> Result<(), ParseError> {
    let mut chars = id.chars();
    let ok_first = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_');
    let ok_rest = id
        .chars()
        .skip(1)
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'));
    if !ok_first || !ok_rest {
        return err(
            line,
            col,
            format!("invalid identifier `{id}` (letters, digits, `_`, `.`, `-`; must not start with a digit; `@` is reserved)"),
        );
    }
    Ok(())
}

fn parse_rat_tok(line: usize, col: usize, tok: &str) -> Result<Rational, ParseError> {
    parse_rational(tok).map_err(|e| ParseError {
        span: SourceSpan { line, column: col },
        message: e,
    })
}

/// Parses a game model file.
pub fn parse_game(text: &str) -> Result<ParsedModel, ParseError> {
    struct Line<'a> {
        no: usize,
        toks: Vec<(usize, &'a str)>,
    }
    let lines: Vec<Line> = text
        .lines()
        .enumerate()
        .map(|(i, l)| Line {
            no: i + 1,
            toks: tokens(l),
        })
        .filter(|l| !l.toks.is_empty())
        .collect();

    // Pass 1: state declarations, in file order.
    let mut names: Vec<String> = Vec::new();
    let mut players: Vec<Player> = Vec::new();
    let mut decl_line: Vec<usize> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for l in &lines {
        if l.toks[0].1 != "state" {
            continue;
        }
        if l.toks.len() != 3 {
            return err(l.no, l.toks[0].0, "expected `state <id> (controller|environment)`");
        }
        let (col, id) = l.toks[1];
        check_id(l.no, col, id)?;
        if index.contains_key(id) {
            return err(l.no, col, format!("duplicate state `{id}`"));
        }
        let player = match l.toks[2].1 {
            "controller" => Player::Controller,
            "environment" => Player::Environment,
            other => return err(l.no, l.toks[2].0, format!("unknown player `{other}`")),
        };
        index.insert(id.to_string(), names.len());
        names.push(id.to_string());
        players.push(player);
        decl_line.push(l.no);
    }
    if names.is_empty() {
        return err(1, 1, "game has no states");
    }
    let lookup_state = |lno: usize, col: usize, id: &str| -> Result<usize, ParseError> {
        match index.get(id) {
            Some(&s) => Ok(s),
            None => err(lno, col, format!("unknown state `{id}`")),
        }
    };

    // Pass 2: transitions build the action lists.
    let mut actions: Vec<Vec<Action>> = vec![Vec::new(); names.len()];
    for l in &lines {
        if l.toks[0].1 != "trans" {
            continue;
        }
        if l.toks.len() < 4 {
            return err(
                l.no,
                l.toks[0].0,
                "expected `trans <state> <action> <succ>:<rat> ...`",
            );
        }
        let s = lookup_state(l.no, l.toks[1].0, l.toks[1].1)?;
        let (acol, aname) = l.toks[2];
        check_id(l.no, acol, aname)?;
        if actions[s].iter().any(|a| a.name == aname) {
            return err(l.no, acol, format!("duplicate action `{aname}` at state `{}`", names[s]));
        }
        let mut transitions = Vec::new();
        let mut seen = BTreeSet::new();
        let mut sum = Rational::zero();
        for &(col, tok) in &l.toks[3..] {
            let Some((succ, prob)) = tok.split_once(':') else {
                return err(l.no, col, format!("expected `<succ>:<rat>`, got `{tok}`"));
            };
            let t = lookup_state(l.no, col, succ)?;
            if !seen.insert(t) {
                return err(l.no, col, format!("successor `{succ}` listed twice"));
            }
            let p = parse_rat_tok(l.no, col + succ.len() + 1, prob)?;
            if p <= Rational::zero() {
                return err(l.no, col + succ.len() + 1, "probability must be positive");
            }
            sum += p.clone();
            transitions.push((t, p));
        }
        if !num::One::is_one(&sum) {
            return err(
                l.no,
                l.toks[3].0,
                format!("distribution sums to {}", format_rational(&sum)),
            );
        }
        actions[s].push(Action {
            name: aname.to_string(),
            transitions,
        });
    }
    for (s, acts) in actions.iter().enumerate() {
        if acts.is_empty() {
            return err(decl_line[s], 1, format!("state `{}` has no enabled action", names[s]));
        }
    }

    // Pass 3: init, labels, rewards, penalties.
    let mut initial: Option<usize> = None;
    let mut labels: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut rewards: BTreeMap<String, RewardStructure> = BTreeMap::new();
    let mut penalties = PenaltyScheme::new(PenaltyKind::Static);
    let lookup_action =
        |lno: usize, col: usize, s: usize, name: &str, actions: &[Vec<Action>]| -> Result<usize, ParseError> {
            match actions[s].iter().position(|a| a.name == name) {
                Some(a) => Ok(a),
                None => err(lno, col, format!("unknown action `{name}` at state `{}`", names[s])),
            }
        };
    for l in &lines {
        match l.toks[0].1 {
            "state" | "trans" => {}
            "init" => {
                if l.toks.len() != 2 {
                    return err(l.no, l.toks[0].0, "expected `init <id>`");
                }
                let s = lookup_state(l.no, l.toks[1].0, l.toks[1].1)?;
                if initial.replace(s).is_some() {
                    return err(l.no, l.toks[0].0, "duplicate `init` line");
                }
            }
            "label" => {
                if l.toks.len() < 3 {
                    return err(l.no, l.toks[0].0, "expected `label <name> <state> ...`");
                }
                let (col, name) = l.toks[1];
                check_id(l.no, col, name)?;
                let set = labels.entry(name.to_string()).or_default();
                for &(c, id) in &l.toks[2..] {
                    set.insert(lookup_state(l.no, c, id)?);
                }
            }
            "reward" => {
                if l.toks.len() != 5 {
                    return err(l.no, l.toks[0].0, "expected `reward <name> <state> <action> <rat>`");
                }
                let (ncol, name) = l.toks[1];
                check_id(l.no, ncol, name)?;
                let s = lookup_state(l.no, l.toks[2].0, l.toks[2].1)?;
                let a = lookup_action(l.no, l.toks[3].0, s, l.toks[3].1, &actions)?;
                let v = parse_rat_tok(l.no, l.toks[4].0, l.toks[4].1)?;
                if v < Rational::zero() {
                    return err(l.no, l.toks[4].0, "rewards must be non-negative");
                }
                rewards
                    .entry(name.to_string())
                    .or_insert_with(|| RewardStructure::new(name))
                    .set(s, a, v);
            }
            "penalty" => {
                if l.toks.len() != 4 {
                    return err(l.no, l.toks[0].0, "expected `penalty <state> <action> <rat>`");
                }
                let s = lookup_state(l.no, l.toks[1].0, l.toks[1].1)?;
                if players[s] != Player::Controller {
                    return err(l.no, l.toks[1].0, format!("penalty on environment state `{}`", names[s]));
                }
                let a = lookup_action(l.no, l.toks[2].0, s, l.toks[2].1, &actions)?;
                let v = parse_rat_tok(l.no, l.toks[3].0, l.toks[3].1)?;
                if v < Rational::zero() {
                    return err(l.no, l.toks[3].0, "penalties must be non-negative");
                }
                penalties.set(s, a, v);
            }
            other => return err(l.no, l.toks[0].0, format!("unknown directive `{other}`")),
        }
    }
    let Some(initial) = initial else {
        return err(1, 1, "missing `init` line");
    };
    let states = names
        .iter()
        .zip(players.iter())
        .zip(actions.into_iter())
        .map(|((name, player), actions)| State {
            name: name.clone(),
            player: *player,
            actions,
        })
        .collect();
    let game = StochasticGame {
        states,
        initial,
        labels,
    };
    let report = game.validate();
    if let Some(first) = report.first() {
        return err(1, 1, first.clone());
    }
    Ok(ParsedModel {
        game,
        rewards,
        penalties,
    })
}

/// Serializes a model in the game format; output re-parses to an equal model
/// whenever all identifiers are valid in the grammar.
pub fn write_game(
    g: &StochasticGame,
    rewards: &BTreeMap<String, RewardStructure>,
    penalties: &PenaltyScheme,
) -> String {
    let mut out = String::new();
    for st in &g.states {
        out.push_str(&format!("state {} {}\n", st.name, st.player));
    }
    out.push_str(&format!("init {}\n", g.state_name(g.initial)));
    for (s, st) in g.states.iter().enumerate() {
        for act in &st.actions {
            out.push_str(&format!("trans {} {}", st.name, act.name));
            for (t, p) in &act.transitions {
                out.push_str(&format!(" {}:{}", g.state_name(*t), format_rational(p)));
            }
            out.push('\n');
        }
        let _ = s;
    }
    for (label, set) in &g.labels {
        out.push_str(&format!("label {}", label));
        for s in set {
            out.push_str(&format!(" {}", g.state_name(*s)));
        }
        out.push('\n');
    }
    for (name, r) in rewards {
        for ((s, a), v) in &r.entries {
            out.push_str(&format!(
                "reward {} {} {} {}\n",
                name,
                g.state_name(*s),
                g.actions(*s)[*a].name,
                format_rational(v)
            ));
        }
    }
    for ((s, a), v) in &penalties.entries {
        out.push_str(&format!(
            "penalty {} {} {}\n",
            g.state_name(*s),
            g.actions(*s)[*a].name,
            format_rational(v)
        ));
    }
    out
}

/// Parses a property: `P(>=|<=)<rat> [F <state|label> ...]` or
/// `R{<name>}(>=|<=)<rat>`. Comment and blank lines around the property are
/// ignored.
pub fn parse_property(text: &str) -> Result<Property, ParseError> {
    let mut found: Option<(usize, &str)> = None;
    for (i, raw) in text.lines().enumerate() {
        let body = match raw.find('#') {
            Some(j) => &raw[..j],
            None => raw,
        };
        if body.trim().is_empty() {
            continue;
        }
        if found.is_some() {
            return err(i + 1, 1, "more than one property line");
        }
        found = Some((i + 1, raw));
    }
    let Some((line, raw)) = found else {
        return err(1, 1, "empty property");
    };
    let body = match raw.find('#') {
        Some(j) => &raw[..j],
        None => raw,
    };
    let trimmed = body.trim_end();
    let start = trimmed.len() - trimmed.trim_start().len();
    let s = trimmed.trim_start();
    let col = |off: usize| start + off + 1;
    if let Some(rest) = s.strip_prefix("R{") {
        let Some(close) = rest.find('}') else {
            return err(line, col(1), "missing `}` after reward name");
        };
        let name = &rest[..close];
        check_id(line, col(2), name)?;
        let tail = &rest[close + 1..];
        let tail_off = 2 + close + 1;
        let (relation, rat_str, rat_off) = split_relation(line, col(tail_off), tail)?;
        let threshold = parse_rat_tok(line, col(tail_off + rat_off), rat_str)?;
        return Ok(Property {
            kind: PropertyKind::Reward(name.to_string()),
            relation,
            threshold,
        });
    }
    if let Some(tail) = s.strip_prefix('P') {
        let (relation, rest, rel_len) = split_relation(line, col(1), tail)?;
        let Some(open) = rest.find('[') else {
            return err(line, col(1 + rel_len), "expected `[F <state> ...]`");
        };
        let rat_str = rest[..open].trim_end();
        let threshold = parse_rat_tok(line, col(1 + rel_len), rat_str)?;
        if threshold < Rational::zero() || threshold > num::one() {
            return err(line, col(1 + rel_len), "reachability threshold outside [0, 1]");
        }
        let inner = &rest[open + 1..];
        let Some(close) = inner.find(']') else {
            return err(line, col(1 + rel_len + open), "missing `]`");
        };
        if !inner[close + 1..].trim().is_empty() {
            return err(line, col(1 + rel_len + open + close + 2), "trailing input after `]`");
        }
        let inner = &inner[..close];
        let mut toks = inner.split_whitespace();
        if toks.next() != Some("F") {
            return err(line, col(1 + rel_len + open + 1), "expected `F` inside `[...]`");
        }
        let targets: Vec<String> = toks.map(|t| t.to_string()).collect();
        if targets.is_empty() {
            return err(line, col(1 + rel_len + open + 1), "no target states");
        }
        for t in &targets {
            check_id(line, col(1 + rel_len + open + 1), t)?;
        }
        return Ok(Property {
            kind: PropertyKind::Reach(targets),
            relation,
            threshold,
        });
    }
    err(line, col(0), "property must start with `P` or `R{`")
}

/// Splits `>=<rat>...` / `<=<rat>...`; returns relation, the remainder and
/// the relation's length.
fn split_relation<'a>(
    line: usize,
    column: usize,
    s: &'a str,
) -> Result<(Relation, &'a str, usize), ParseError> {
    if let Some(rest) = s.strip_prefix(">=") {
        Ok((Relation::AtLeast, rest, 2))
    } else if let Some(rest) = s.strip_prefix("<=") {
        Ok((Relation::AtMost, rest, 2))
    } else {
        err(line, column, "expected `>=` or `<=`")
    }
}

/// Parses a multi-strategy file against its game.
pub fn parse_multistrategy(text: &str, g: &StochasticGame) -> Result<MultiStrategy, ParseError> {
    let lines: Vec<(usize, Vec<(usize, &str)>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, tokens(l)))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let Some((hline, header)) = lines.first() else {
        return err(1, 1, "empty multi-strategy file");
    };
    if header.len() != 2 || header[0].1 != "multistrategy" {
        return err(*hline, header[0].0, "expected header `multistrategy (det|rand)`");
    }
    let randomised = match header[1].1 {
        "det" => false,
        "rand" => true,
        other => return err(*hline, header[1].0, format!("unknown mode `{other}`")),
    };
    let mut choice: BTreeMap<usize, Vec<(BTreeSet<usize>, Rational)>> = BTreeMap::new();
    for (lno, toks) in &lines[1..] {
        let lno = *lno;
        if toks[0].1 != "allow" {
            return err(lno, toks[0].0, format!("unknown directive `{}`", toks[0].1));
        }
        if toks.len() < 4 || toks[2].1 != ":" {
            return err(lno, toks[0].0, "expected `allow <state> : ...`");
        }
        let (scol, sname) = toks[1];
        let Some(s) = g.state_index(sname) else {
            return err(lno, scol, format!("unknown state `{sname}`"));
        };
        if !g.is_controller(s) {
            return err(lno, scol, format!("`{sname}` is not a controller state"));
        }
        if choice.contains_key(&s) {
            return err(lno, scol, format!("duplicate `allow` for state `{sname}`"));
        }
        let lookup_action = |col: usize, name: &str| -> Result<usize, ParseError> {
            match g.action_index(s, name) {
                Some(a) => Ok(a),
                None => err(lno, col, format!("unknown action `{name}` at state `{sname}`")),
            }
        };
        let body = &toks[3..];
        if randomised {
            let mut dist: Vec<(BTreeSet<usize>, Rational)> = Vec::new();
            let mut i = 0;
            let mut sum = Rational::zero();
            while i < body.len() {
                let (wcol, wtok) = body[i];
                let w = parse_rat_tok(lno, wcol, wtok)?;
                if w <= Rational::zero() {
                    return err(lno, wcol, "weights must be positive");
                }
                i += 1;
                if i >= body.len() || body[i].1 != "{" {
                    return err(lno, wcol, "expected `{` after weight");
                }
                i += 1;
                let mut set = BTreeSet::new();
                while i < body.len() && body[i].1 != "}" {
                    set.insert(lookup_action(body[i].0, body[i].1)?);
                    i += 1;
                }
                if i >= body.len() {
                    return err(lno, wcol, "missing `}`");
                }
                i += 1;
                if set.is_empty() {
                    return err(lno, wcol, "empty allowed set");
                }
                sum += w.clone();
                dist.push((set, w));
            }
            if dist.is_empty() {
                return err(lno, toks[2].0, "no branches");
            }
            if !num::One::is_one(&sum) {
                return err(
                    lno,
                    body[0].0,
                    format!("weights sum to {}", format_rational(&sum)),
                );
            }
            choice.insert(s, dist);
        } else {
            let mut set = BTreeSet::new();
            for &(col, name) in body {
                set.insert(lookup_action(col, name)?);
            }
            choice.insert(s, vec![(set, num::one())]);
        }
    }
    let theta = MultiStrategy { choice };
    let report = theta.validate(g);
    if let Some(first) = report.first() {
        return err(1, 1, first.clone());
    }
    Ok(theta)
}

/// Serializes a multi-strategy sorted by state id; action names within a set
/// are sorted.
pub fn write_multistrategy(theta: &MultiStrategy, g: &StochasticGame) -> String {
    let mut out = String::new();
    out.push_str(if theta.is_deterministic() {
        "multistrategy det\n"
    } else {
        "multistrategy rand\n"
    });
    for (s, dist) in &theta.choice {
        let set_names = |set: &BTreeSet<usize>| -> String {
            let mut names: Vec<&str> =
                set.iter().map(|a| g.actions(*s)[*a].name.as_str()).collect();
            names.sort_unstable();
            names.join(" ")
        };
        if theta.is_deterministic() {
            out.push_str(&format!(
                "allow {} : {}\n",
                g.state_name(*s),
                set_names(&dist[0].0)
            ));
        } else {
            out.push_str(&format!("allow {} :", g.state_name(*s)));
            for (set, w) in dist {
                out.push_str(&format!(" {} {{ {} }}", format_rational(w), set_names(set)));
            }
            out.push('\n');
        }
    }
    out
}

/// Parses a solution file: one `<varname> <decimal>` per line. Values are
/// read as doubles (external solvers print decimal or scientific notation).
pub fn parse_solution(text: &str) -> Result<BTreeMap<String, f64>, ParseError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let toks = tokens(raw);
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return err(i + 1, toks[0].0, "expected `<varname> <value>`");
        }
        let (vcol, var) = toks[0];
        let (ncol, num) = toks[1];
        let value: f64 = match num.parse() {
            Ok(v) => v,
            Err(_) => return err(i + 1, ncol, format!("invalid number `{num}`")),
        };
        if !value.is_finite() {
            return err(i + 1, ncol, "value must be finite");
        }
        if out.insert(var.to_string(), value).is_some() {
            return err(i + 1, vcol, format!("duplicate variable `{var}`"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rational::{rat, rat_int};

    fn robot_text() -> String {
        let (g, moves, psi) = fixtures::robot_game();
        let mut rewards = BTreeMap::new();
        rewards.insert("moves".to_string(), moves);
        write_game(&g, &rewards, &psi)
    }

    #[test]
    fn robot_round_trips() {
        let (g, moves, psi) = fixtures::robot_game();
        let text = robot_text();
        let m = parse_game(&text).unwrap();
        assert_eq!(m.game, g);
        assert_eq!(m.rewards["moves"], moves);
        assert_eq!(m.penalties.entries, psi.entries);
        assert_eq!(
            m.game
                .states
                .iter()
                .filter(|s| s.player == Player::Environment)
                .count(),
            2
        );
    }

    #[test]
    fn trans_line_parses_fractions() {
        let text = "\
state s0 controller
state s1 environment
state s2 controller
init s0
trans s0 a s1:1
trans s1 impede s0:3/4 s2:1/4
trans s2 loop s2:1
";
        let m = parse_game(text).unwrap();
        let a = &m.game.actions(1)[0];
        assert_eq!(a.transitions, vec![(0, rat(3, 4)), (2, rat(1, 4))]);
    }

    #[test]
    fn bad_distribution_sum_reported_with_span() {
        let text = "\
state s0 controller
state s1 environment
state s2 controller
init s0
trans s0 a s1:0.3 s2:0.3
trans s1 b s2:1
trans s2 loop s2:1
";
        let e = parse_game(text).unwrap_err();
        assert!(e.message.contains("distribution sums to 3/5"), "{e}");
        assert_eq!(e.span.line, 5);
        assert_eq!(e.span.column, 12);
    }

    #[test]
    fn rejects_reserved_and_unknown_ids() {
        let e = parse_game("state s@1 controller\ninit s@1\ntrans s@1 a s@1:1\n").unwrap_err();
        assert!(e.message.contains("reserved"), "{e}");
        let e = parse_game("state s0 controller\ninit s0\ntrans s0 a s9:1\n").unwrap_err();
        assert!(e.message.contains("unknown state `s9`"), "{e}");
        assert_eq!(e.span.line, 3);
        let e = parse_game("state s0 martian\n").unwrap_err();
        assert!(e.message.contains("unknown player"), "{e}");
    }

    #[test]
    fn rejects_duplicates_and_missing_parts() {
        let base = "state s0 controller\ninit s0\ntrans s0 a s0:1\n";
        let e = parse_game(&format!("{base}trans s0 a s0:1\n")).unwrap_err();
        assert!(e.message.contains("duplicate action"), "{e}");
        let e = parse_game(&format!("{base}trans s0 b s0:1/2 s0:1/2\n")).unwrap_err();
        assert!(e.message.contains("listed twice"), "{e}");
        let e = parse_game("state s0 controller\ntrans s0 a s0:1\n").unwrap_err();
        assert!(e.message.contains("missing `init`"), "{e}");
        let e = parse_game("state s0 controller\ninit s0\n").unwrap_err();
        assert!(e.message.contains("no enabled action"), "{e}");
    }

    #[test]
    fn property_examples() {
        let p = parse_property("R{moves}<=5").unwrap();
        assert_eq!(p.kind, PropertyKind::Reward("moves".to_string()));
        assert_eq!(p.relation, Relation::AtMost);
        assert_eq!(p.threshold, rat_int(5));
        let p = parse_property("P>=0.9999 [F s5]").unwrap();
        assert_eq!(p.kind, PropertyKind::Reach(vec!["s5".to_string()]));
        assert_eq!(p.relation, Relation::AtLeast);
        assert_eq!(p.threshold, rat(9999, 10000));
        let p = parse_property("# comment\n\nP<=1/2 [F goal s3]\n").unwrap();
        assert_eq!(
            p.kind,
            PropertyKind::Reach(vec!["goal".to_string(), "s3".to_string()])
        );
        assert!(parse_property("P>=1.5 [F s0]").is_err());
        assert!(parse_property("Q>=1 [F s0]").is_err());
        assert!(parse_property("R{moves}=5").is_err());
        assert!(parse_property("P>=0.5 [G s0]").is_err());
        assert!(parse_property("").is_err());
    }

    #[test]
    fn property_display_round_trips() {
        for text in ["R{moves}<=5", "P>=1/2 [F s3]", "P<=9999/10000 [F a b]"] {
            let p = parse_property(text).unwrap();
            assert_eq!(parse_property(&p.to_string()).unwrap(), p);
        }
    }

    #[test]
    fn multistrategy_round_trips() {
        let (g, _, _) = fixtures::robot_game();
        for theta in [
            fixtures::robot_theta_penalty_one(&g),
            fixtures::robot_theta_randomised(&g),
            MultiStrategy::allow_all(&g),
        ] {
            let text = write_multistrategy(&theta, &g);
            let back = parse_multistrategy(&text, &g).unwrap();
            assert_eq!(back, theta, "text:\n{text}");
        }
    }

    #[test]
    fn multistrategy_rand_example_format() {
        let (g, _, _) = fixtures::robot_game();
        let theta = fixtures::robot_theta_randomised(&g);
        let text = write_multistrategy(&theta, &g);
        assert!(text.contains("allow s3 : 7/10 { east } 3/10 { east north }"), "{text}");
    }

    #[test]
    fn multistrategy_errors() {
        let (g, _, _) = fixtures::robot_game();
        let e = parse_multistrategy("multistrategy det\nallow s9 : east\n", &g).unwrap_err();
        assert!(e.message.contains("unknown state"), "{e}");
        let e = parse_multistrategy("multistrategy det\nallow s1 : impede\n", &g).unwrap_err();
        assert!(e.message.contains("not a controller state"), "{e}");
        let e = parse_multistrategy(
            "multistrategy rand\nallow s0 : 1/2 { east } 2/5 { south }\nallow s2 : 1 { south }\nallow s3 : 1 { east }\nallow s5 : 1 { done }\n",
            &g,
        )
        .unwrap_err();
        assert!(e.message.contains("weights sum to 9/10"), "{e}");
        assert_eq!(e.span.line, 2);
        // Missing controller state.
        let e = parse_multistrategy("multistrategy det\nallow s0 : east\n", &g).unwrap_err();
        assert!(e.message.contains("no choice"), "{e}");
    }

    #[test]
    fn solution_files() {
        let sol = parse_solution("# obj 1\ny_s0_east 1\nx_s0 0.35\nz 1e-3\n").unwrap();
        assert_eq!(sol["y_s0_east"], 1.0);
        assert_eq!(sol["x_s0"], 0.35);
        assert_eq!(sol["z"], 1e-3);
        assert!(parse_solution("y_s0 east 1\n").is_err());
        assert!(parse_solution("y_s0 oops\n").is_err());
        assert!(parse_solution("y 1\ny 1\n").is_err());
        assert!(parse_solution("y inf\n").is_err());
    }

    #[test]
    fn random_games_round_trip() {
        let cfg = fixtures::RandomGameConfig::default();
        for seed in 0..60 {
            let (g, r, psi) = fixtures::random_game(seed, &cfg);
            let mut rewards = BTreeMap::new();
            rewards.insert(r.name.clone(), r.clone());
            let text = write_game(&g, &rewards, &psi);
            let m = parse_game(&text).unwrap();
            assert_eq!(m.game, g, "seed {seed}");
            let parsed_r = m
                .rewards
                .get(&r.name)
                .cloned()
                .unwrap_or_else(|| RewardStructure::new(r.name.clone()));
            assert_eq!(parsed_r, r, "seed {seed}");
            assert_eq!(m.penalties.entries, psi.entries, "seed {seed}");
        }
    }

    #[test]
    fn knapsack_fixture_round_trips() {
        use crate::fixtures::KnapsackItem;
        let items = vec![
            KnapsackItem { value: rat(1, 2), weight: rat_int(2) },
            KnapsackItem { value: rat(3, 4), weight: rat(1, 3) },
            KnapsackItem { value: rat_int(1), weight: rat_int(0) },
            KnapsackItem { value: rat(1, 8), weight: rat_int(5) },
        ];
        let (g, r, psi, _, _) =
            fixtures::gen_knapsack_game(&items, &rat_int(1), &rat_int(3)).unwrap();
        let mut rewards = BTreeMap::new();
        rewards.insert(r.name.clone(), r.clone());
        let text = write_game(&g, &rewards, &psi);
        let m = parse_game(&text).unwrap();
        assert_eq!(m.game, g);
        assert_eq!(m.rewards[&r.name], r);
        assert_eq!(m.penalties.entries, psi.entries);
    }
}
