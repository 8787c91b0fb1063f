//! MovingAI-style grid maps and scenarios, and randomized instance generation.
//!
//! Map files look like
//!
//! ```text
//! type octile
//! height 2
//! width 3
//! map
//! ..@
//! ...
//! ```
//!
//! `.` and `G` are free cells; `@`, `O`, `T`, `S` and `W` are obstacles. Movement
//! is 4-connected regardless of the `type` line.
//!
//! Randomness comes from ChaCha8 seeded with a `u64` (`rand_chacha`), which is
//! portable across platforms; uniform draws are half-open `[lo, hi)`.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridGraph, Vertex};
use crate::plan::{AgentType, PlanError};
use crate::sassp::DistanceTable;

/// Lower bound of the step-cost distribution and its degenerate value.
pub const MIN_STEP_COST: f64 = 1e-6;
pub const MIN_UTILITY: f64 = 0.001;
pub const MAX_UTILITY: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("map has {passable} passable cells, need at least {needed} for {agents} agents")]
    TooFewCells { passable: usize, needed: usize, agents: usize },
    #[error("could not place agent {agent} with a reachable goal")]
    NoReachableGoal { agent: usize },
    #[error("agents {0} and {1} share a start cell")]
    SharedStart(usize, usize),
    #[error("agents {0} and {1} share a goal cell")]
    SharedGoal(usize, usize),
    #[error("epsilon must be nonnegative, got {0}")]
    Epsilon(f64),
    #[error("scenario has {available} entries, {requested} requested")]
    ScenarioTooShort { available: usize, requested: usize },
    #[error("scenario entry {index}: {message}")]
    ScenarioEntry { index: usize, message: String },
    #[error(transparent)]
    Agent(#[from] PlanError),
}

fn cell_passable(c: u8) -> Option<bool> {
    match c {
        b'.' | b'G' => Some(true),
        b'@' | b'O' | b'T' | b'S' | b'W' => Some(false),
        _ => None,
    }
}

fn header_value<'a>(line: Option<(usize, &'a str)>, key: &str) -> Result<&'a str, ParseError> {
    let (n, text) = line.ok_or_else(|| ParseError::new(0, format!("missing `{key}` line")))?;
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => Ok(v),
        _ => Err(ParseError::new(n, format!("expected `{key} <value>`, found {text:?}"))),
    }
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
}

/// Parses a grid map. Every error names the offending 1-based line.
pub fn parse_map(bytes: &[u8]) -> Result<GridGraph, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        ParseError::new(line, "invalid UTF-8")
    })?;
    let mut lines = numbered_lines(text);
    header_value(lines.next(), "type")?;
    let height_line = lines.next();
    let height: usize = header_value(height_line, "height")?
        .parse()
        .map_err(|_| ParseError::new(2, "height is not a nonnegative integer"))?;
    let width: usize = header_value(lines.next(), "width")?
        .parse()
        .map_err(|_| ParseError::new(3, "width is not a nonnegative integer"))?;
    match lines.next() {
        Some((_, "map")) => {}
        Some((n, other)) => return Err(ParseError::new(n, format!("expected `map`, found {other:?}"))),
        None => return Err(ParseError::new(4, "missing `map` line")),
    }
    let mut passable = Vec::with_capacity(width * height);
    for row in 0..height {
        let (n, line) = lines
            .next()
            .ok_or_else(|| ParseError::new(5 + row, format!("expected {height} rows, found {row}")))?;
        if line.len() != width {
            return Err(ParseError::new(
                n,
                format!("row has {} characters, expected {width}", line.len()),
            ));
        }
        for (col, c) in line.bytes().enumerate() {
            let p = cell_passable(c).ok_or_else(|| {
                ParseError::new(n, format!("unknown map character {:?} at column {}", c as char, col + 1))
            })?;
            passable.push(p);
        }
    }
    if let Some((n, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(ParseError::new(n, format!("unexpected content after {height} map rows")));
    }
    Ok(GridGraph::new(width, height, passable))
}

/// Serializes a grid in the map format, writing `.` for free and `@` for blocked cells.
pub fn write_map(map: &GridGraph) -> String {
    let mut out = format!("type octile\nheight {}\nwidth {}\nmap\n", map.height(), map.width());
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = map.vertex(x, y).unwrap();
            out.push(if map.is_passable(v) { '.' } else { '@' });
        }
        out.push('\n');
    }
    out
}

/// One row of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub bucket: u32,
    pub map_name: String,
    pub map_width: usize,
    pub map_height: usize,
    pub start_x: usize,
    pub start_y: usize,
    pub goal_x: usize,
    pub goal_y: usize,
    pub optimal_length: f64,
}

pub fn parse_scen(bytes: &[u8]) -> Result<Vec<ScenarioEntry>, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ParseError::new(0, "invalid UTF-8"))?;
    let mut lines = numbered_lines(text);
    header_value(lines.next(), "version")?;
    let mut entries = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 9 {
            return Err(ParseError::new(n, format!("expected 9 tab-separated fields, found {}", fields.len())));
        }
        let int = |i: usize, name: &str| -> Result<usize, ParseError> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| ParseError::new(n, format!("{name} {:?} is not a nonnegative integer", fields[i])))
        };
        let entry = ScenarioEntry {
            bucket: int(0, "bucket")? as u32,
            map_name: fields[1].to_string(),
            map_width: int(2, "width")?,
            map_height: int(3, "height")?,
            start_x: int(4, "start_x")?,
            start_y: int(5, "start_y")?,
            goal_x: int(6, "goal_x")?,
            goal_y: int(7, "goal_y")?,
            optimal_length: fields[8]
                .trim()
                .parse()
                .map_err(|_| ParseError::new(n, format!("optimal length {:?} is not a number", fields[8])))?,
        };
        let (w, h) = (entry.map_width, entry.map_height);
        if entry.start_x >= w || entry.start_y >= h {
            return Err(ParseError::new(n, format!("start ({}, {}) lies outside the {w}x{h} map", entry.start_x, entry.start_y)));
        }
        if entry.goal_x >= w || entry.goal_y >= h {
            return Err(ParseError::new(n, format!("goal ({}, {}) lies outside the {w}x{h} map", entry.goal_x, entry.goal_y)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// A solvable problem: a map, agent types, the envy tolerance, and the seed it came from.
#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub map: GridGraph,
    pub agents: Vec<AgentType>,
    pub seed: u64,
    pub epsilon: f64,
}

impl InstanceSpec {
    pub fn new(
        map: GridGraph,
        agents: Vec<AgentType>,
        seed: u64,
        epsilon: f64,
    ) -> Result<Self, InstanceError> {
        if !(epsilon >= 0.0) {
            return Err(InstanceError::Epsilon(epsilon));
        }
        for (i, a) in agents.iter().enumerate() {
            a.validate_on(&map)?;
            for (j, b) in agents.iter().enumerate().skip(i + 1) {
                if a.start == b.start {
                    return Err(InstanceError::SharedStart(i, j));
                }
                if a.goal == b.goal {
                    return Err(InstanceError::SharedGoal(i, j));
                }
            }
        }
        Ok(Self { map, agents, seed, epsilon })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }
}

/// Knobs for [`sample_agents_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleOptions {
    /// Allow an agent whose goal equals its start.
    pub allow_stationary: bool,
}

fn sample_cost(rng: &mut ChaCha8Rng, utility: f64, dist: usize) -> f64 {
    let upper = if dist == 0 {
        MIN_STEP_COST
    } else {
        MIN_STEP_COST.max(utility / dist as f64)
    };
    if upper > MIN_STEP_COST {
        rng.gen_range(MIN_STEP_COST..upper)
    } else {
        MIN_STEP_COST
    }
}

fn sample_utility(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(MIN_UTILITY..MAX_UTILITY)
}

/// Draws `count` agents with distinct cells, reachable goals, `u ~ U[0.001, 1)`
/// and `c ~ U[1e-6, max(1e-6, u / dist))`. Pure in `(map, count, seed)`.
pub fn sample_agents(map: &GridGraph, count: usize, seed: u64) -> Result<Vec<AgentType>, InstanceError> {
    sample_agents_with(map, count, seed, SampleOptions::default())
}

pub fn sample_agents_with(
    map: &GridGraph,
    count: usize,
    seed: u64,
    options: SampleOptions,
) -> Result<Vec<AgentType>, InstanceError> {
    let cells: Vec<Vertex> = map.passable_vertices().collect();
    let needed = if options.allow_stationary { count } else { 2 * count };
    if cells.len() < needed {
        return Err(InstanceError::TooFewCells { passable: cells.len(), needed, agents: count });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used: HashSet<Vertex> = HashSet::new();
    let mut agents = Vec::with_capacity(count);
    for id in 0..count {
        let mut placed = None;
        for _attempt in 0..64 {
            let free: Vec<Vertex> = cells.iter().copied().filter(|v| !used.contains(v)).collect();
            let &start = free.choose(&mut rng).expect("enough free cells");
            let dist = DistanceTable::from_source(map, start);
            let goals: Vec<Vertex> = free
                .iter()
                .copied()
                .filter(|&g| (options.allow_stationary || g != start) && dist.get(g).is_some())
                .collect();
            if let Some(&goal) = goals.choose(&mut rng) {
                placed = Some((start, goal, dist.get(goal).unwrap()));
                break;
            }
        }
        let (start, goal, d) = placed.ok_or(InstanceError::NoReachableGoal { agent: id })?;
        used.insert(start);
        used.insert(goal);
        let utility = sample_utility(&mut rng);
        let step_cost = sample_cost(&mut rng, utility, d);
        agents.push(AgentType::new(id, start, goal, utility, step_cost)?);
    }
    Ok(agents)
}

/// Takes starts and goals from the first `count` scenario rows and samples
/// utilities and step costs as [`sample_agents`] does.
pub fn agents_from_scenario(
    map: &GridGraph,
    entries: &[ScenarioEntry],
    count: usize,
    seed: u64,
) -> Result<Vec<AgentType>, InstanceError> {
    if entries.len() < count {
        return Err(InstanceError::ScenarioTooShort { available: entries.len(), requested: count });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries[..count]
        .iter()
        .enumerate()
        .map(|(id, e)| {
            let bad = |message: &str| InstanceError::ScenarioEntry { index: id, message: message.into() };
            let start = map.vertex(e.start_x, e.start_y).ok_or_else(|| bad("start outside map"))?;
            let goal = map.vertex(e.goal_x, e.goal_y).ok_or_else(|| bad("goal outside map"))?;
            let d = DistanceTable::from_source(map, start)
                .get(goal)
                .ok_or_else(|| bad("goal unreachable"))?;
            let utility = sample_utility(&mut rng);
            let step_cost = sample_cost(&mut rng, utility, d);
            Ok(AgentType::new(id, start, goal, utility, step_cost)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map_text(rows: &[&str]) -> String {
        format!("type octile\nheight {}\nwidth {}\nmap\n{}\n", rows.len(), rows[0].len(), rows.join("\n"))
    }

    #[test]
    fn parses_small_map() {
        let g = parse_map(map_text(&["..", ".@"]).as_bytes()).unwrap();
        assert_eq!((g.width(), g.height()), (2, 2));
        assert_eq!(g.passable_count(), 3);
    }

    #[test]
    fn g_is_passable_and_tree_is_not() {
        let g = parse_map(map_text(&["GT", "SW"]).as_bytes()).unwrap();
        assert_eq!(g.passable_count(), 1);
    }

    #[test]
    fn row_length_mismatch_names_line() {
        let err = parse_map(b"type octile\nheight 2\nwidth 2\nmap\n..\n...\n").unwrap_err();
        assert_eq!(err.line, 6);
    }

    #[test]
    fn unknown_character_and_bad_header() {
        assert_eq!(parse_map(b"type octile\nheight 1\nwidth 2\nmap\n.x\n").unwrap_err().line, 5);
        assert_eq!(parse_map(b"type octile\nheigth 1\nwidth 2\nmap\n..\n").unwrap_err().line, 2);
        assert_eq!(parse_map(b"type octile\nheight 2\nwidth 2\nmap\n..\n").unwrap_err().line, 6);
        assert_eq!(parse_map(b"type octile\nheight 1\nwidth 2\nmap\n..\n..\n").unwrap_err().line, 6);
    }

    #[test]
    fn crlf_is_accepted() {
        let g = parse_map(b"type octile\r\nheight 1\r\nwidth 2\r\nmap\r\n.@\r\n").unwrap();
        assert_eq!(g.passable_count(), 1);
    }

    #[test]
    fn scen_parsing() {
        let one = "version 1\n0\tm.map\t4\t4\t0\t1\t3\t2\t4.0\n";
        let e = parse_scen(one.as_bytes()).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!((e[0].start_x, e[0].start_y, e[0].goal_x, e[0].goal_y), (0, 1, 3, 2));
        assert!(parse_scen(b"version 1\n").unwrap().is_empty());
        let outside = "version 1\n0\tm.map\t4\t4\t0\t1\t4\t2\t4.0\n";
        assert_eq!(parse_scen(outside.as_bytes()).unwrap_err().line, 2);
        let short = "version 1\n0\tm.map\t4\t4\t0\t1\t3\n";
        assert_eq!(parse_scen(short.as_bytes()).unwrap_err().line, 2);
        let nonnum = "version 1\n\n0\tm.map\t4\t4\tx\t1\t3\t2\t4.0\n";
        assert_eq!(parse_scen(nonnum.as_bytes()).unwrap_err().line, 3);
    }

    #[test]
    fn single_agent_sampling_bounds() {
        let g = GridGraph::open(16, 16);
        let agents = sample_agents(&g, 1, 42).unwrap();
        let a = &agents[0];
        let d = crate::sassp::shortest_steps(&g, a.start, a.goal).unwrap();
        assert!(a.utility >= MIN_UTILITY && a.utility <= MAX_UTILITY);
        assert!(a.step_cost >= MIN_STEP_COST && a.step_cost <= MIN_STEP_COST.max(a.utility / d as f64));
        assert_ne!(a.start, a.goal);
    }

    #[test]
    fn stationary_agent_gets_minimal_cost() {
        let g = GridGraph::open(1, 1);
        let agents = sample_agents_with(&g, 1, 3, SampleOptions { allow_stationary: true }).unwrap();
        assert_eq!(agents[0].start, agents[0].goal);
        assert_eq!(agents[0].step_cost, MIN_STEP_COST);
        assert!(matches!(sample_agents(&g, 1, 3), Err(InstanceError::TooFewCells { .. })));
    }

    #[test]
    fn instance_rejects_shared_cells() {
        let g = GridGraph::open(3, 3);
        let a = AgentType::new(0, Vertex(0), Vertex(1), 1.0, 0.1).unwrap();
        let b = AgentType::new(1, Vertex(0), Vertex(2), 1.0, 0.1).unwrap();
        assert!(matches!(InstanceSpec::new(g, vec![a, b], 0, 0.1), Err(InstanceError::SharedStart(0, 1))));
    }

    fn arb_grid() -> impl Strategy<Value = GridGraph> {
        (1usize..7, 1usize..7).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<bool>(), w * h).prop_map(move |p| GridGraph::new(w, h, p))
        })
    }

    proptest! {
        #[test]
        fn map_round_trip(g in arb_grid()) {
            let text = write_map(&g);
            prop_assert_eq!(parse_map(text.as_bytes()).unwrap(), g);
        }

        #[test]
        fn sampling_is_deterministic_and_welfare_nonnegative(seed in any::<u64>(), count in 1usize..5) {
            let g = GridGraph::from_rows(&["......", ".@@...", "......", "...@..", "......"]);
            let a = sample_agents(&g, count, seed).unwrap();
            let b = sample_agents(&g, count, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let mut cells = HashSet::new();
            for agent in &a {
                prop_assert!(cells.insert(agent.start));
                prop_assert!(cells.insert(agent.goal));
                let d = crate::sassp::shortest_steps(&g, agent.start, agent.goal).unwrap();
                prop_assert!(agent.welfare_at(d) >= -1e-12);
            }
        }
    }
}
