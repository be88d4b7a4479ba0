//! Reduced power-network description: admittance matrices, machine
//! parameters, equilibrium point, and line ratings.
//!
//! A case is loaded from a *case bundle*, a directory of four plain-text
//! files (`network`, `machines`, `equilibrium`, `ratings`). The grammar is
//! line oriented, `#` starts a comment, all values are decimal ASCII and
//! matrices are row-major:
//!
//! ```text
//! network:      n <count>
//!               edge <i> <j> <g_ij> <b_ij>     (one per line, i < j)
//!               G <n values>                   (n rows)
//!               B <n values>                   (n rows)
//! machines:     h <n values>
//!               d <n values>
//!               p_m <n values>
//!               omega_R <value>
//! equilibrium:  v_star <n values>
//!               delta_star <n values>
//! ratings:      rating <i> <j> <u_max>
//! ```
//!
//! Parsing is strict: unknown keys, duplicate keys, dimension mismatches,
//! and trailing garbage are all rejected with a named error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Symmetry tolerance for the parsed admittance matrices.
const SYMMETRY_TOL: f64 = 1e-12;

/// Undirected transmission line between buses `i` and `j`, 1-based,
/// stored in canonical order `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineId {
    i: usize,
    j: usize,
}

impl LineId {
    /// Builds a canonical line id; bus order is normalized.
    pub fn new(a: usize, b: usize) -> Self {
        if a <= b {
            LineId { i: a, j: b }
        } else {
            LineId { i: b, j: a }
        }
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }
}

impl fmt::Display for LineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.i, self.j)
    }
}

impl FromStr for LineId {
    type Err = String;

    /// Accepts `"i-j"` (e.g. `"4-9"`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| format!("expected `i-j`, got `{s}`"))?;
        let i: usize = a.trim().parse().map_err(|_| format!("bad bus index `{a}`"))?;
        let j: usize = b.trim().parse().map_err(|_| format!("bad bus index `{b}`"))?;
        Ok(LineId::new(i, j))
    }
}

/// Reduced network with machine parameters and line ratings.
///
/// Every bus carries machine states `(v, omega, delta, eta)`; the effective
/// state dimension of the stochastic model is `4n`. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCase {
    n: usize,
    edges: Vec<LineId>,
    g: Array2<f64>,
    b: Array2<f64>,
    h: Array1<f64>,
    d: Array1<f64>,
    p_m: Array1<f64>,
    omega_r: f64,
    ratings: BTreeMap<LineId, f64>,
}

/// Operating point the stochastic model is initialized around.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub v_star: Array1<f64>,
    pub delta_star: Array1<f64>,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("missing bundle file `{0}`")]
    MissingFile(String),
    #[error("i/o error reading `{file}`: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Syntax {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}:{line}: unknown key `{key}`")]
    UnknownKey {
        file: String,
        line: usize,
        key: String,
    },
    #[error("dimension mismatch in `{file}`: {msg}")]
    DimensionMismatch { file: String, msg: String },
    #[error("matrix {name} is asymmetric at ({i},{j}): {a} vs {b}")]
    AsymmetricMatrix {
        name: &'static str,
        i: usize,
        j: usize,
        a: f64,
        b: f64,
    },
    #[error("edge {0} is out of range or not in canonical order")]
    BadEdge(LineId),
    #[error("edge {0} has zero susceptance b_ij")]
    ZeroSusceptance(LineId),
    #[error("duplicate edge {0}")]
    DuplicateEdge(LineId),
    #[error("nonpositive rating {rating} for line {line}")]
    NonpositiveRating { line: LineId, rating: f64 },
    #[error("rating refers to unknown edge {0}")]
    RatingForUnknownEdge(LineId),
    #[error("nonpositive inertia h_{0}")]
    NonpositiveInertia(usize),
    #[error("negative damping d_{0}")]
    NegativeDamping(usize),
    #[error("nonpositive equilibrium voltage v*_{0}")]
    NonpositiveVoltage(usize),
    #[error("non-finite value for `{0}`")]
    NonFinite(String),
    #[error("line {0} is not an edge of the case")]
    NoSuchEdge(LineId),
    #[error("removing line {0} would disconnect the network")]
    Islanding(LineId),
    #[error("no rating for line {0}")]
    MissingRating(LineId),
    #[error("edge list entry {line}: {field} disagrees with matrix entry ({listed} vs {matrix})")]
    EdgeMatrixMismatch {
        line: LineId,
        field: &'static str,
        listed: f64,
        matrix: f64,
    },
}

impl PowerCase {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[LineId] {
        &self.edges
    }

    pub fn g(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn h(&self) -> &Array1<f64> {
        &self.h
    }

    pub fn d(&self) -> &Array1<f64> {
        &self.d
    }

    pub fn p_m(&self) -> &Array1<f64> {
        &self.p_m
    }

    pub fn omega_r(&self) -> f64 {
        self.omega_r
    }

    pub fn ratings(&self) -> &BTreeMap<LineId, f64> {
        &self.ratings
    }

    pub fn has_edge(&self, l: LineId) -> bool {
        self.edges.contains(&l)
    }

    /// Susceptance of an existing line (0-based matrix access behind 1-based ids).
    pub fn line_susceptance(&self, l: LineId) -> Result<f64, CaseError> {
        if !self.has_edge(l) {
            return Err(CaseError::NoSuchEdge(l));
        }
        Ok(self.b[[l.i() - 1, l.j() - 1]])
    }

    /// Long-term rating `u_max` of a line.
    pub fn line_rating(&self, l: LineId) -> Result<f64, CaseError> {
        self.ratings
            .get(&l)
            .copied()
            .ok_or(CaseError::MissingRating(l))
    }

    /// Returns a copy with line `l` removed: the four off-diagonal G/B
    /// entries are zeroed and the edge (with its rating) dropped. Diagonal
    /// (shunt/self) entries are left untouched.
    pub fn remove_line(&self, l: LineId) -> Result<PowerCase, CaseError> {
        if !self.has_edge(l) {
            return Err(CaseError::NoSuchEdge(l));
        }
        let remaining: Vec<LineId> = self.edges.iter().copied().filter(|&e| e != l).collect();
        if !is_connected(self.n, &remaining) {
            return Err(CaseError::Islanding(l));
        }
        let mut out = self.clone();
        let (i, j) = (l.i() - 1, l.j() - 1);
        out.g[[i, j]] = 0.0;
        out.g[[j, i]] = 0.0;
        out.b[[i, j]] = 0.0;
        out.b[[j, i]] = 0.0;
        out.edges = remaining;
        out.ratings.remove(&l);
        Ok(out)
    }
}

/// Union-find connectivity over buses `1..=n` restricted to `edges`.
pub fn is_connected(n: usize, edges: &[LineId]) -> bool {
    if n == 0 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in edges {
        let (a, b) = (find(&mut parent, e.i() - 1), find(&mut parent, e.j() - 1));
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (1..n).all(|k| find(&mut parent, k) == root)
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Lines<'a> {
    file: &'a str,
    items: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(file: &'a str, text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .filter_map(|(k, raw)| {
                let body = raw.split('#').next().unwrap_or("").trim();
                if body.is_empty() {
                    None
                } else {
                    Some((k + 1, body.split_whitespace().collect()))
                }
            })
            .collect();
        Lines {
            file,
            items,
            pos: 0,
        }
    }

    fn next(&mut self) -> Option<&(usize, Vec<&'a str>)> {
        let item = self.items.get(self.pos);
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    fn peek_key(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|(_, toks)| toks[0])
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> CaseError {
        CaseError::Syntax {
            file: self.file.to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn done(&self) -> Result<(), CaseError> {
        if let Some((line, toks)) = self.items.get(self.pos) {
            Err(CaseError::UnknownKey {
                file: self.file.to_string(),
                line: *line,
                key: toks[0].to_string(),
            })
        } else {
            Ok(())
        }
    }
}

fn parse_f64(lines: &Lines, line: usize, tok: &str) -> Result<f64, CaseError> {
    tok.parse::<f64>()
        .map_err(|_| lines.err(line, format!("expected a number, got `{tok}`")))
}

fn parse_usize(lines: &Lines, line: usize, tok: &str) -> Result<usize, CaseError> {
    tok.parse::<usize>()
        .map_err(|_| lines.err(line, format!("expected an integer, got `{tok}`")))
}

/// Reads a `key v1 .. vn` vector line.
fn expect_vector(
    lines: &mut Lines,
    key: &str,
    n: usize,
) -> Result<Array1<f64>, CaseError> {
    let file = lines.file.to_string();
    let (line, toks) = lines
        .next()
        .cloned()
        .ok_or_else(|| CaseError::DimensionMismatch {
            file,
            msg: format!("missing `{key}` line"),
        })?;
    if toks[0] != key {
        return Err(CaseError::UnknownKey {
            file: lines.file.to_string(),
            line,
            key: toks[0].to_string(),
        });
    }
    if toks.len() != n + 1 {
        return Err(CaseError::DimensionMismatch {
            file: lines.file.to_string(),
            msg: format!("`{key}` has {} values, expected {n}", toks.len() - 1),
        });
    }
    let mut out = Array1::zeros(n);
    for (k, tok) in toks[1..].iter().enumerate() {
        out[k] = parse_f64(lines, line, tok)?;
    }
    Ok(out)
}

fn read_bundle_file(dir: &Path, name: &str) -> Result<String, CaseError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(CaseError::MissingFile(path.display().to_string()));
    }
    std::fs::read_to_string(&path).map_err(|source| CaseError::Io {
        file: path.display().to_string(),
        source,
    })
}

/// Parses and validates a case bundle directory.
pub fn parse_case_bundle(dir: impl AsRef<Path>) -> Result<(PowerCase, EquilibriumPoint), CaseError> {
    let dir = dir.as_ref();

    // -- network ------------------------------------------------------------
    let text = read_bundle_file(dir, "network")?;
    let mut lines = Lines::new("network", &text);

    let (ln, toks) = lines
        .next()
        .ok_or_else(|| CaseError::DimensionMismatch {
            file: "network".into(),
            msg: "empty file".into(),
        })?
        .clone();
    if toks[0] != "n" || toks.len() != 2 {
        return Err(lines.err(ln, "expected `n <count>` as the first entry"));
    }
    let n = parse_usize(&lines, ln, toks[1])?;
    if n == 0 {
        return Err(lines.err(ln, "machine count must be positive"));
    }

    let mut edges: Vec<LineId> = Vec::new();
    let mut edge_gb: Vec<(LineId, f64, f64)> = Vec::new();
    while lines.peek_key() == Some("edge") {
        let (ln, toks) = lines.next().unwrap().clone();
        if toks.len() != 5 {
            return Err(lines.err(ln, "expected `edge <i> <j> <g> <b>`"));
        }
        let i = parse_usize(&lines, ln, toks[1])?;
        let j = parse_usize(&lines, ln, toks[2])?;
        let g = parse_f64(&lines, ln, toks[3])?;
        let b = parse_f64(&lines, ln, toks[4])?;
        let l = LineId { i, j };
        if !(1 <= i && i < j && j <= n) {
            return Err(CaseError::BadEdge(l));
        }
        if edges.contains(&l) {
            return Err(CaseError::DuplicateEdge(l));
        }
        if b == 0.0 {
            return Err(CaseError::ZeroSusceptance(l));
        }
        edges.push(l);
        edge_gb.push((l, g, b));
    }

    let read_matrix = |key: &'static str, lines: &mut Lines| -> Result<Array2<f64>, CaseError> {
        let mut m = Array2::zeros((n, n));
        for r in 0..n {
            let row = expect_vector(lines, key, n)?;
            m.row_mut(r).assign(&row);
        }
        Ok(m)
    };
    let g = read_matrix("G", &mut lines)?;
    let b = read_matrix("B", &mut lines)?;
    lines.done()?;

    for (name, m) in [("G", &g), ("B", &b)] {
        for i in 0..n {
            if !m[[i, i]].is_finite() {
                return Err(CaseError::NonFinite(format!("{name}[{0}][{0}]", i + 1)));
            }
            for j in 0..n {
                if !m[[i, j]].is_finite() {
                    return Err(CaseError::NonFinite(format!("{name}[{}][{}]", i + 1, j + 1)));
                }
                if (m[[i, j]] - m[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(CaseError::AsymmetricMatrix {
                        name,
                        i: i + 1,
                        j: j + 1,
                        a: m[[i, j]],
                        b: m[[j, i]],
                    });
                }
            }
        }
    }
    for (l, ge, be) in &edge_gb {
        let (i, j) = (l.i() - 1, l.j() - 1);
        if *ge != g[[i, j]] {
            return Err(CaseError::EdgeMatrixMismatch {
                line: *l,
                field: "g_ij",
                listed: *ge,
                matrix: g[[i, j]],
            });
        }
        if *be != b[[i, j]] {
            return Err(CaseError::EdgeMatrixMismatch {
                line: *l,
                field: "b_ij",
                listed: *be,
                matrix: b[[i, j]],
            });
        }
    }

    // -- machines -----------------------------------------------------------
    let text = read_bundle_file(dir, "machines")?;
    let mut lines = Lines::new("machines", &text);
    let h = expect_vector(&mut lines, "h", n)?;
    let d = expect_vector(&mut lines, "d", n)?;
    let p_m = expect_vector(&mut lines, "p_m", n)?;
    let omega_r = expect_vector(&mut lines, "omega_R", 1)?[0];
    lines.done()?;

    for (k, &v) in h.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CaseError::NonpositiveInertia(k + 1));
        }
    }
    for (k, &v) in d.iter().enumerate() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CaseError::NegativeDamping(k + 1));
        }
    }
    if p_m.iter().any(|v| !v.is_finite()) || !omega_r.is_finite() {
        return Err(CaseError::NonFinite("machines".into()));
    }

    // -- equilibrium --------------------------------------------------------
    let text = read_bundle_file(dir, "equilibrium")?;
    let mut lines = Lines::new("equilibrium", &text);
    let v_star = expect_vector(&mut lines, "v_star", n)?;
    let delta_star = expect_vector(&mut lines, "delta_star", n)?;
    lines.done()?;
    for (k, &v) in v_star.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CaseError::NonpositiveVoltage(k + 1));
        }
    }
    if delta_star.iter().any(|v| !v.is_finite()) {
        return Err(CaseError::NonFinite("delta_star".into()));
    }

    // -- ratings ------------------------------------------------------------
    let text = read_bundle_file(dir, "ratings")?;
    let mut lines = Lines::new("ratings", &text);
    let mut ratings = BTreeMap::new();
    while let Some((ln, toks)) = lines.next().map(|x| x.clone()) {
        if toks[0] != "rating" {
            return Err(CaseError::UnknownKey {
                file: "ratings".into(),
                line: ln,
                key: toks[0].to_string(),
            });
        }
        if toks.len() != 4 {
            return Err(lines.err(ln, "expected `rating <i> <j> <u_max>`"));
        }
        let i = parse_usize(&lines, ln, toks[1])?;
        let j = parse_usize(&lines, ln, toks[2])?;
        let u_max = parse_f64(&lines, ln, toks[3])?;
        let l = LineId::new(i, j);
        if !edges.contains(&l) {
            return Err(CaseError::RatingForUnknownEdge(l));
        }
        if !(u_max > 0.0 && u_max.is_finite()) {
            return Err(CaseError::NonpositiveRating {
                line: l,
                rating: u_max,
            });
        }
        ratings.insert(l, u_max);
    }

    let case = PowerCase {
        n,
        edges,
        g,
        b,
        h,
        d,
        p_m,
        omega_r,
        ratings,
    };
    let eq = EquilibriumPoint { v_star, delta_star };
    Ok((case, eq))
}

/// Writes a case bundle in the same grammar `parse_case_bundle` reads.
/// Floats use Rust's shortest round-trip formatting, so
/// parse -> write -> parse is exact.
pub fn write_case_bundle(
    dir: impl AsRef<Path>,
    case: &PowerCase,
    eq: &EquilibriumPoint,
) -> std::io::Result<()> {
    use std::fmt::Write as _;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let join = |v: &Array1<f64>| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut network = String::new();
    writeln!(network, "n {}", case.n).unwrap();
    for l in &case.edges {
        let (i, j) = (l.i() - 1, l.j() - 1);
        writeln!(
            network,
            "edge {} {} {} {}",
            l.i(),
            l.j(),
            case.g[[i, j]],
            case.b[[i, j]]
        )
        .unwrap();
    }
    for r in 0..case.n {
        writeln!(network, "G {}", join(&case.g.row(r).to_owned())).unwrap();
    }
    for r in 0..case.n {
        writeln!(network, "B {}", join(&case.b.row(r).to_owned())).unwrap();
    }
    std::fs::write(dir.join("network"), network)?;

    let mut machines = String::new();
    writeln!(machines, "h {}", join(&case.h)).unwrap();
    writeln!(machines, "d {}", join(&case.d)).unwrap();
    writeln!(machines, "p_m {}", join(&case.p_m)).unwrap();
    writeln!(machines, "omega_R {}", case.omega_r).unwrap();
    std::fs::write(dir.join("machines"), machines)?;

    let mut equilibrium = String::new();
    writeln!(equilibrium, "v_star {}", join(&eq.v_star)).unwrap();
    writeln!(equilibrium, "delta_star {}", join(&eq.delta_star)).unwrap();
    std::fs::write(dir.join("equilibrium"), equilibrium)?;

    let mut ratings = String::new();
    for (l, u) in &case.ratings {
        writeln!(ratings, "rating {} {} {}", l.i(), l.j(), u).unwrap();
    }
    std::fs::write(dir.join("ratings"), ratings)?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Direct constructor for in-memory test cases; skips bundle parsing
    /// but keeps the type's invariants the caller's responsibility.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn make_case(
        n: usize,
        edges: Vec<LineId>,
        g: Array2<f64>,
        b: Array2<f64>,
        h: Array1<f64>,
        d: Array1<f64>,
        p_m: Array1<f64>,
        omega_r: f64,
        ratings: BTreeMap<LineId, f64>,
    ) -> PowerCase {
        PowerCase {
            n,
            edges,
            g,
            b,
            h,
            d,
            p_m,
            omega_r,
            ratings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    /// 2-bus toy bundle text, optionally with a broken G entry.
    fn toy_bundle(dir: &Path, asymmetric: bool, with_rating: bool) {
        let g21 = if asymmetric { "0.51" } else { "0.5" };
        let mut network = String::new();
        writeln!(network, "# toy 2-bus case").unwrap();
        writeln!(network, "n 2").unwrap();
        writeln!(network, "edge 1 2 0.5 -5").unwrap();
        writeln!(network, "G 0.1 0.5").unwrap();
        writeln!(network, "G {g21} 0.2").unwrap();
        writeln!(network, "B -4.9 -5").unwrap();
        writeln!(network, "B -5 -4.8").unwrap();
        std::fs::write(dir.join("network"), network).unwrap();
        std::fs::write(
            dir.join("machines"),
            "h 1.0 1.0\nd 0.5 0.5\np_m 0.1 -0.1\nomega_R 1.0\n",
        )
        .unwrap();
        std::fs::write(
            dir.join("equilibrium"),
            "v_star 1.0 0.98\ndelta_star 0.0 -0.05\n",
        )
        .unwrap();
        let ratings = if with_rating { "rating 1 2 1.0\n" } else { "" };
        std::fs::write(dir.join("ratings"), ratings).unwrap();
    }

    #[test]
    fn parses_minimal_toy_bundle() {
        let dir = tempfile::tempdir().unwrap();
        toy_bundle(dir.path(), false, true);
        let (case, eq) = parse_case_bundle(dir.path()).unwrap();
        assert_eq!(case.n(), 2);
        assert_eq!(case.edges(), &[LineId::new(1, 2)]);
        assert_eq!(case.b()[[0, 1]], -5.0);
        assert_eq!(case.b()[[1, 0]], -5.0);
        assert_eq!(case.line_rating(LineId::new(1, 2)).unwrap(), 1.0);
        assert_eq!(eq.v_star[0], 1.0);
    }

    #[test]
    fn rejects_asymmetric_g() {
        let dir = tempfile::tempdir().unwrap();
        toy_bundle(dir.path(), true, true);
        match parse_case_bundle(dir.path()) {
            Err(CaseError::AsymmetricMatrix { name: "G", .. }) => {}
            other => panic!("expected asymmetric-G error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_trailing_garbage() {
        let dir = tempfile::tempdir().unwrap();
        toy_bundle(dir.path(), false, true);
        let mut text = std::fs::read_to_string(dir.path().join("machines")).unwrap();
        text.push_str("bogus 1 2 3\n");
        std::fs::write(dir.path().join("machines"), text).unwrap();
        match parse_case_bundle(dir.path()) {
            Err(CaseError::UnknownKey { key, .. }) => assert_eq!(key, "bogus"),
            other => panic!("expected unknown-key error, got {other:?}"),
        }
    }

    #[test]
    fn missing_rating_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        toy_bundle(dir.path(), false, false);
        let (case, _) = parse_case_bundle(dir.path()).unwrap();
        match case.line_rating(LineId::new(1, 2)) {
            Err(CaseError::MissingRating(l)) => assert_eq!(l, LineId::new(1, 2)),
            other => panic!("expected missing-rating error, got {other:?}"),
        }
    }

    #[test]
    fn remove_line_islanding_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        toy_bundle(dir.path(), false, true);
        let (case, _) = parse_case_bundle(dir.path()).unwrap();
        // Only edge: removal disconnects the two buses.
        match case.remove_line(LineId::new(1, 2)) {
            Err(CaseError::Islanding(_)) => {}
            other => panic!("expected islanding error, got {other:?}"),
        }
        match case.remove_line(LineId::new(1, 3)) {
            Err(CaseError::NoSuchEdge(_)) => {}
            other => panic!("expected no-such-edge error, got {other:?}"),
        }
    }

    /// Triangle case used by removal tests.
    fn triangle() -> (PowerCase, EquilibriumPoint) {
        let n = 3;
        let mut g = Array2::zeros((n, n));
        let mut b = Array2::zeros((n, n));
        let edges = vec![LineId::new(1, 2), LineId::new(1, 3), LineId::new(2, 3)];
        for l in &edges {
            let (i, j) = (l.i() - 1, l.j() - 1);
            g[[i, j]] = 0.3;
            g[[j, i]] = 0.3;
            b[[i, j]] = -3.0;
            b[[j, i]] = -3.0;
        }
        for i in 0..n {
            g[[i, i]] = 0.7;
            b[[i, i]] = 6.0;
        }
        let case = PowerCase {
            n,
            edges,
            g,
            b,
            h: Array1::from_elem(n, 1.0),
            d: Array1::from_elem(n, 0.5),
            p_m: Array1::zeros(n),
            omega_r: 1.0,
            ratings: BTreeMap::from([(LineId::new(1, 2), 1.0)]),
        };
        let eq = EquilibriumPoint {
            v_star: Array1::from_elem(n, 1.0),
            delta_star: Array1::zeros(n),
        };
        (case, eq)
    }

    #[test]
    fn remove_line_zeroes_exactly_four_offdiagonals() {
        let (case, _) = triangle();
        let l = LineId::new(2, 3);
        let removed = case.remove_line(l).unwrap();
        assert_eq!(removed.edges().len(), 2);
        assert_eq!(removed.b()[[1, 2]], 0.0);
        assert_eq!(removed.b()[[2, 1]], 0.0);
        assert_eq!(removed.g()[[1, 2]], 0.0);
        assert_eq!(removed.g()[[2, 1]], 0.0);
        // Diagonals and all other entries untouched.
        let mut changed = 0;
        for i in 0..3 {
            for j in 0..3 {
                if removed.g()[[i, j]] != case.g()[[i, j]] {
                    changed += 1;
                }
                if removed.b()[[i, j]] != case.b()[[i, j]] {
                    changed += 1;
                }
            }
        }
        assert_eq!(changed, 4); // G[i][j], G[j][i], B[i][j], B[j][i]
        // Second removal of the same line fails.
        match removed.remove_line(l) {
            Err(CaseError::NoSuchEdge(_)) => {}
            other => panic!("expected no-such-edge, got {other:?}"),
        }
        // Symmetry preserved.
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(removed.g()[[i, j]], removed.g()[[j, i]]);
                assert_eq!(removed.b()[[i, j]], removed.b()[[j, i]]);
            }
        }
    }

    #[test]
    fn bundle_round_trip_is_exact() {
        let (case, eq) = triangle();
        let dir = tempfile::tempdir().unwrap();
        write_case_bundle(dir.path(), &case, &eq).unwrap();
        let (case2, eq2) = parse_case_bundle(dir.path()).unwrap();
        assert_eq!(case, case2);
        assert_eq!(eq, eq2);
    }

    /// Brute-force BFS oracle for the connectivity check.
    fn bfs_connected(n: usize, edges: &[LineId]) -> bool {
        let mut adj = vec![Vec::new(); n];
        for e in edges {
            adj[e.i() - 1].push(e.j() - 1);
            adj[e.j() - 1].push(e.i() - 1);
        }
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    proptest::proptest! {
        #[test]
        fn connectivity_matches_bfs_oracle(
            n in 2usize..12,
            picks in proptest::collection::vec((0usize..12, 0usize..12), 0..20)
        ) {
            let mut edges = Vec::new();
            for (a, b) in picks {
                let (a, b) = (a % n + 1, b % n + 1);
                if a != b {
                    let l = LineId::new(a, b);
                    if !edges.contains(&l) {
                        edges.push(l);
                    }
                }
            }
            proptest::prop_assert_eq!(is_connected(n, &edges), bfs_connected(n, &edges));
        }
    }
}
